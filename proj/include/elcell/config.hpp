#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "elcell/forward.hpp"
#include "elcell/grid.hpp"
#include "elcell/measure.hpp"
#include "elcell/models.hpp"

namespace elcell {

/// Configuration parse or validation failure with a field-path diagnostic,
/// e.g. "model.diffusion[0].value: must be positive".
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  int dim = 2;
  std::vector<int> n{33, 33};
  std::vector<std::array<double, 2>> extent;  // empty = unit box
};

struct PotentialSpec {
  std::string kind = "affine";  // affine | affine_sin | separable | expression
  std::vector<double> conc_coef{0.3};
  double temp_coef = 1.0;
  double offset = 0.0;
  std::array<double, 3> pos_coef{0.0, 0.0, 0.0};
  double amp = 0.0;   // affine_sin
  double freq = 0.0;  // affine_sin
  double conc_amp = 0.0;  // separable
  double pos_slope = 0.0; // separable
  std::string expr;             // expression
  double slope_lower_bound = 0.0;
  double partial_bound = 0.0;
};

struct DiffusionSpec {
  std::string kind = "constant";  // constant | affine_temp | sin_mix | position | expression
  double value = 1.0;             // constant
  double base = 1.0;              // affine_temp, sin_mix, position
  double slope = 0.0;             // affine_temp
  std::array<double, 2> temp_range{0.0, 2.0};  // affine_temp
  double amp = 0.0;               // sin_mix
  double conc_w = 0.0;            // sin_mix
  double temp_w = 0.0;            // sin_mix
  std::array<double, 3> grad{0.0, 0.0, 0.0};   // position
  std::string expr;               // expression
  double lower = 0.0;
  double upper = 0.0;
  double lipschitz = 0.0;
};

struct SourceSpec {
  std::string kind = "zero";  // zero | bounded | expression
  double amp = 0.0;           // bounded
  double freq = 0.0;          // bounded
  std::string expr;           // expression
  double c0 = 0.0;
  double c1 = 0.0;
};

struct PermittivitySpec {
  std::string kind = "constant";  // constant | affine | expression
  double value = 1.0;             // constant
  double base = 1.0;              // affine
  std::array<double, 3> grad{0.0, 0.0, 0.0};
  std::string expr;               // expression
  double lower = 0.0;
};

struct ModelSpec {
  int species = 1;
  std::vector<double> charge{1.0};
  double lambda = 0.5;
  PotentialSpec potential;
  std::vector<DiffusionSpec> diffusion{DiffusionSpec{}};
  std::vector<SourceSpec> source{SourceSpec{}};
  PermittivitySpec permittivity;
};

/// Boundary data as position expressions (x1..x3 only).
struct ExperimentSpec {
  std::vector<std::string> gamma{"1 + 0.2*sin(3.141592653589793*x1)"};
  std::string tau = "1 + 0.2*x2";
};

struct LinearisationSpec {
  std::vector<double> mu{1.0};
  std::string eta0 = "1";
  std::vector<std::string> f{"0.2*sin(3.141592653589793*x1)"};
  std::vector<double> t_list;  // empty = default 2^-1..2^-8
};

struct ReconstructSpec {
  std::vector<double> z0{1.0, 1.0};  // M concentrations then temperature
  std::vector<int> x0_index{0, 0};   // grid index coordinates of the reference
  double bump_radius = 0.3;
  std::vector<std::array<double, 2>> conc_range{{0.8, 1.2}};
  std::array<double, 2> temp_range{0.8, 1.2};
  int boundary_z_count = 10;
  int boundary_x_count = 10;
  int slice_count = 33;
  int interior_count = 20;
  std::vector<double> probe;  // empty = domain centre
};

struct FitSpec {
  std::vector<int> data_n;  // empty = one refinement finer than grid.n
  std::vector<double> theta_init{0.8, 0.1};
  // The box must stay inside the family's validity region: base + slope * t
  // must clear the model's ellipticity bound across temp_range at every
  // corner.
  std::vector<std::array<double, 2>> theta_box{{0.75, 2.0}, {-0.2, 0.2}};
  std::array<double, 2> temp_range{0.8, 1.2};
};

struct DemoBoundarySpec {
  std::vector<double> center;  // empty = domain centre
  double radius = 0.25;
  double amp = 0.05;
};

struct RefinementSpec {
  std::vector<int> n_list{17, 33, 65};
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output = "out";
  GridSpec grid;
  ModelSpec model;
  PicardOptions solver;  // threads and initial_iterate are not config fields
  NoiseSpec noise;
  std::vector<ExperimentSpec> experiments{ExperimentSpec{}};
  std::vector<std::vector<double>> probes;
  LinearisationSpec linearisation;
  ReconstructSpec reconstruct;
  FitSpec fit;
  DemoBoundarySpec demo_boundary;
  RefinementSpec demo_source;
  RefinementSpec convergence;
};

/// Parses YAML text into a fully validated configuration; unknown keys, type
/// mismatches and invalid values raise ConfigError with the field path.
RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::filesystem::path& path);

/// Effective configuration with all defaults filled, in fixed key order.
/// parse_config(emit_config(c)) reproduces c exactly.
std::string emit_config(const RunConfig& cfg);

/// Hash of the effective configuration text, recorded in run manifests.
std::uint64_t config_hash(const RunConfig& cfg);

// Builders from validated specs.
Grid build_grid_from(const GridSpec& spec);
ModelBundle build_bundle(const ModelSpec& spec, const Grid& g);
/// Position-only closure for boundary data expressions: x1..x3 may appear,
/// species references are rejected, and the temperature slot reads as zero.
std::function<double(const Point&)> boundary_expression(const std::string& expr);

} // namespace elcell
