#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elcell/expr.hpp"
#include "elcell/grid.hpp"

namespace elcell {

using StateFn = std::function<double(std::span<const double>, double, const Point&)>;
using PosGradFn = std::function<Point(std::span<const double>, double, const Point&)>;

/// Electric potential as a function of species concentrations, temperature
/// and position. Carries declared bounds: a positive lower bound on the
/// temperature partial (the ellipticity constant for this coefficient) and a
/// global bound on all first partials. Partials fall back to centred finite
/// differences with step 1e-6 when no analytic closures are installed.
class PotentialModel {
 public:
  PotentialModel() = default;
  PotentialModel(std::string name, int species, StateFn value,
                 double slope_lower_bound, double partial_bound);

  double value(std::span<const double> conc, double temp, const Point& pos) const;
  double temp_partial(std::span<const double> conc, double temp, const Point& pos) const;
  double conc_partial(int i, std::span<const double> conc, double temp, const Point& pos) const;
  Point pos_gradient(std::span<const double> conc, double temp, const Point& pos) const;

  void set_partials(StateFn temp_partial, std::vector<StateFn> conc_partials,
                    PosGradFn pos_gradient);
  bool has_analytic_partials() const { return static_cast<bool>(temp_partial_); }

  int species() const { return species_; }
  double slope_lower_bound() const { return slope_lower_bound_; }
  double partial_bound() const { return partial_bound_; }
  const std::string& name() const { return name_; }

  /// Same potential plus a constant; declared bounds carry over. Used by the
  /// gauge-invariance checks.
  PotentialModel shifted(double r) const;

 private:
  std::string name_;
  int species_ = 0;
  StateFn value_;
  StateFn temp_partial_;
  std::vector<StateFn> conc_partials_;
  PosGradFn pos_gradient_;
  double slope_lower_bound_ = 0.0;
  double partial_bound_ = 0.0;
};

/// Per-species diffusion coefficient D(conc, temp, pos) with declared
/// two-sided bounds and a Lipschitz estimate in the state arguments.
class DiffusionModel {
 public:
  DiffusionModel() = default;
  DiffusionModel(std::string name, int species, StateFn value, double lower,
                 double upper, double lipschitz);

  double value(std::span<const double> conc, double temp, const Point& pos) const;
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double lipschitz() const { return lipschitz_; }
  int species() const { return species_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  int species_ = 0;
  StateFn value_;
  double lower_ = 0.0, upper_ = 0.0, lipschitz_ = 0.0;
};

/// Per-species volumetric source g(conc, temp, pos) with declared growth
/// bound |g| <= c0 + c1 * max_i |conc_i|.
class SourceModel {
 public:
  SourceModel() = default;
  SourceModel(std::string name, int species, StateFn value, double c0, double c1,
              bool identically_zero = false);

  double value(std::span<const double> conc, double temp, const Point& pos) const;
  double growth_c0() const { return c0_; }
  double growth_c1() const { return c1_; }
  bool is_zero() const { return zero_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  int species_ = 0;
  StateFn value_;
  double c0_ = 0.0, c1_ = 0.0;
  bool zero_ = false;
};

/// Known position-dependent permittivity with declared lower bound.
class PermittivityModel {
 public:
  PermittivityModel() = default;
  PermittivityModel(std::string name, std::function<double(const Point&)> value,
                    double lower);

  double value(const Point& pos) const;
  ScalarField sample(const Grid& g) const;
  double lower() const { return lower_; }
  const std::string& name() const { return name_; }

 private:
  std::string name_;
  std::function<double(const Point&)> value_;
  double lower_ = 0.0;
};

/// The full coefficient set of one cell configuration.
struct ModelBundle {
  int species = 0;                        // M
  std::vector<double> charge;             // per-species charge, length M
  PotentialModel potential;
  std::vector<DiffusionModel> diffusion;  // length M
  std::vector<SourceModel> source;        // length M
  PermittivityModel permittivity;
  double lambda = 0.0;                    // shared ellipticity bound

  bool source_free() const;
  void check() const;  // size and bound sanity, throws std::invalid_argument
};

// ---------------------------------------------------------------------------
// Ellipticity validation

struct StateRanges {
  std::vector<std::array<double, 2>> conc;  // per species
  std::array<double, 2> temp{0.0, 1.0};
  const Grid* grid = nullptr;  // positions sampled from this box
  int points_per_axis = 5;
};

struct EllipticityReport {
  bool ok = true;
  double min_permittivity = 0.0;
  double min_diffusion = 0.0;
  double min_potential_slope = 0.0;
  std::string violator;  // "permittivity", "diffusion[i]", "potential", "source[i]"
  std::vector<double> sample_conc;
  double sample_temp = 0.0;
  Point sample_pos{0.0, 0.0, 0.0};
  std::string message;
};

/// Samples permittivity, diffusion, the potential's temperature partial and
/// the source growth bound over a finite state grid; fails fast on the first
/// violation of the declared lambda.
EllipticityReport validate_ellipticity(const ModelBundle& bundle,
                                       const StateRanges& ranges);

// ---------------------------------------------------------------------------
// Inverse temperature map

/// Solves potential(conc, t, pos) = target for t. Bracket expansion with
/// doubling steps from the initial guess target / slope_lower_bound, then
/// safeguarded Newton bisection. |potential(conc,t,pos) - target| <= tol on
/// return.
double invert_temperature(const PotentialModel& phi, std::span<const double> conc,
                          double target, const Point& pos, double tol = 1e-12);

/// d/ds of the inverse map: 1 / temp_partial at the inverted point.
double invert_temperature_slope(const PotentialModel& phi,
                                std::span<const double> conc, double target,
                                const Point& pos, double tol = 1e-12);

// ---------------------------------------------------------------------------
// Model catalogue

/// affine: phi = conc_coef . p + temp_coef * s + offset + pos_coef . x
PotentialModel make_affine_potential(std::vector<double> conc_coef,
                                     double temp_coef, double offset,
                                     Point pos_coef = {0.0, 0.0, 0.0});

/// affine plus sinusoidal perturbation in the temperature slot:
/// phi = affine + amp * sin(freq * s); requires temp_coef > |amp * freq|.
PotentialModel make_affine_sin_potential(std::vector<double> conc_coef,
                                         double temp_coef, double offset,
                                         Point pos_coef, double amp, double freq);

/// separable product: phi = temp_coef * s * (1 + conc_amp*sin(p1)) *
/// (1 + pos_coef*x1) + offset. Declared bounds assume the unit box and
/// |conc_amp| < 1, pos_coef >= 0.
PotentialModel make_separable_potential(double temp_coef, double conc_amp,
                                        double pos_coef, double offset);

/// base potential plus amp * psi(x), psi a smooth bump supported in the ball
/// of the given radius around center. Vanishes identically near the boundary
/// when the ball stays inside the domain; used to demonstrate that boundary
/// data cannot see interior modifications of the potential.
PotentialModel make_bumped_potential(const PotentialModel& base, Point center,
                                     double radius, double amp);

/// The bump profile used by make_bumped_potential: cos^2(pi r / (2 radius))
/// inside the ball, 0 outside; equals 1 at the center.
double bump_profile(const Point& x, const Point& center, double radius);

DiffusionModel make_constant_diffusion(double value);
/// D = base + slope * temp, bounds declared over the given temperature range.
DiffusionModel make_affine_temp_diffusion(double base, double slope,
                                          std::array<double, 2> temp_range);
/// D = base + amp * sin(conc_w * p1 + temp_w * temp); Lipschitz in the state.
DiffusionModel make_sin_mix_diffusion(double base, double amp, double conc_w,
                                      double temp_w);
/// D = base + grad . x (position only).
DiffusionModel make_position_diffusion(double base, Point grad,
                                       const Grid& box);

SourceModel make_zero_source();
/// g = amp * sin(freq * p1); bounded, for tests with sources.
SourceModel make_bounded_source(double amp, double freq);

PermittivityModel make_constant_permittivity(double value);
PermittivityModel make_affine_permittivity(double base, Point grad,
                                           const Grid& box);

// Expression-backed models; partials fall back to finite differences.
PotentialModel potential_from_expression(const std::string& expr, int species,
                                         double slope_lower_bound,
                                         double partial_bound);
DiffusionModel diffusion_from_expression(const std::string& expr, int species,
                                         double lower, double upper,
                                         double lipschitz);
SourceModel source_from_expression(const std::string& expr, int species,
                                   double c0, double c1);
PermittivityModel permittivity_from_expression(const std::string& expr,
                                               double lower);

} // namespace elcell
