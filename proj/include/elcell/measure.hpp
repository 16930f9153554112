#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "elcell/forward.hpp"
#include "elcell/grid.hpp"
#include "elcell/models.hpp"

namespace elcell {

/// Boundary traces of one solved state: the prescribed Dirichlet data plus
/// the species normal fluxes N.(D_i grad c_i) and optionally the temperature
/// normal flux N.grad T. A record without temp_flux is the reduced variant.
struct CauchyRecord {
  std::vector<BoundaryField> gamma;
  BoundaryField tau;
  std::vector<BoundaryField> flux;
  std::optional<BoundaryField> temp_flux;
};

/// Forms the Cauchy record of a converged state by evaluating the diffusion
/// coefficients nodewise and taking normal traces.
CauchyRecord cauchy_record(const SystemState& state, const ModelBundle& bundle,
                           bool with_temp_flux = true);

/// Potential difference between two boundary nodes, read off the substituted
/// field: sigma(x) - sigma(y). Invariant under constant shifts of the
/// potential model.
double voltage(const SystemState& state, std::size_t x_node, std::size_t y_node);

/// Temperatures at interior probe points by multilinear interpolation.
std::vector<double> interior_temperature(const SystemState& state,
                                         const std::vector<Point>& points);

// ---------------------------------------------------------------------------
// Laboratory

/// One Dirichlet data set: per-species boundary concentrations plus boundary
/// temperature.
struct Experiment {
  std::vector<BoundaryField> gamma;
  BoundaryField tau;
};

/// Additive Gaussian noise levels per measurement family; zero disables the
/// family's noise entirely.
struct NoiseSpec {
  double voltage_sd = 0.0;
  double flux_sd = 0.0;
  double temp_sd = 0.0;
};

/// A measurement value together with the seed its noise stream was drawn
/// from. The seed is derived from the request alone, so identical requests
/// carry identical noise.
template <typename T>
struct Measured {
  T value{};
  std::uint64_t noise_seed = 0;
};

/// Measurement oracle around a hidden true model. Inverse-side callers see
/// only the public data (grid, permittivity, charges, ellipticity constant)
/// and the measurement results; the hidden potential, diffusion and source
/// models never leave. Thread safe; concurrent experiments share a bounded
/// solution cache.
class Laboratory {
 public:
  Laboratory(const Grid& g, ModelBundle hidden, PicardOptions opts = {},
             NoiseSpec noise = {}, std::uint64_t seed = 0);

  const Grid& grid() const { return *grid_; }
  int species() const { return hidden_.species; }
  const PermittivityModel& permittivity() const { return hidden_.permittivity; }
  const std::vector<double>& charge() const { return hidden_.charge; }
  double lambda() const { return hidden_.lambda; }
  const PicardOptions& options() const { return opts_; }
  const NoiseSpec& noise() const { return noise_; }

  Measured<CauchyRecord> cauchy(const Experiment& e,
                                bool with_temp_flux = true) const;
  Measured<double> voltage_between(const Experiment& e, std::size_t x_node,
                                   std::size_t y_node) const;
  /// sigma(b) - sigma(ref) for every boundary node b, as one field.
  Measured<BoundaryField> boundary_voltages(const Experiment& e,
                                            std::size_t ref_node) const;
  Measured<std::vector<double>> probe_temperatures(
      const Experiment& e, const std::vector<Point>& points) const;

  /// Number of forward solves performed so far (cache misses).
  std::size_t solves() const;

 private:
  struct CacheEntry {
    std::uint64_t key = 0;
    Experiment request;
    std::shared_ptr<const SystemState> state;
  };

  std::shared_ptr<const SystemState> solve(const Experiment& e) const;
  std::uint64_t experiment_hash(const Experiment& e) const;
  std::uint64_t noise_seed_for(const char* family, std::uint64_t data_hash) const;

  const Grid* grid_;
  ModelBundle hidden_;
  PicardOptions opts_;
  NoiseSpec noise_;
  std::uint64_t seed_;

  mutable std::mutex mu_;
  mutable std::list<CacheEntry> cache_;
  mutable std::size_t solve_count_ = 0;
};

/// Gaussian stream with an explicit splitmix64-driven uniform source, so the
/// draws do not depend on the standard library's distribution internals.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : state_(seed) {}
  double next();

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Boundary data hitting prescribed values at two boundary nodes: constant
/// background at the reference values plus tent bumps of the given radius
/// around both nodes, with amplitudes solved from the 2x2 overlap system.
/// values and ref_values have M+1 entries: species concentrations then
/// temperature.
Experiment make_probe_data(const Grid& g, std::size_t node,
                           std::size_t ref_node,
                           const std::vector<double>& values,
                           const std::vector<double>& ref_values,
                           double radius);

// ---------------------------------------------------------------------------
// Linearised boundary map and its convergence rate

/// Intermediate fields of one linearised_dn evaluation, exposed for warm
/// starts and diagnostics.
struct LinearisedBackground {
  std::vector<ScalarField> fields;     // M+1 background coordinates (mu..., sigma_bg)
  std::vector<ScalarField> solutions;  // per-species linearised solutions
};

/// Flux response of the problem linearised at the constant background mu:
/// freezes the diffusion coefficients on the background state (mu, sigma_bg)
/// with sigma_bg = L^-1_eps(q.mu; eta0), then applies the plain DN map per
/// species to the data f. Source-free bundles only.
std::vector<BoundaryField> linearised_dn(const ModelBundle& bundle,
                                         const std::vector<double>& mu,
                                         const BoundaryField& eta0,
                                         const std::vector<BoundaryField>& f,
                                         double tol = 1e-10,
                                         LinearisedBackground* extra = nullptr);

struct RateReport {
  std::vector<double> t;        // strictly decreasing, positive
  std::vector<double> error;    // stacked boundary 2-norm of flux(t)/t - linear flux
  std::vector<bool> converged;  // per-t forward solve outcome
  double slope = 0.0;           // log-log fit over the last converged points
  int fit_points = 0;
};

/// Drives the nonlinear system with data mu + t f (temperature data chosen
/// so the substituted potential keeps the trace eta0), measures species
/// fluxes, divides by t, and compares against linearised_dn. The fit uses
/// the last (up to) four converged t values.
RateReport linearisation_rate(const ModelBundle& bundle, const Grid& g,
                              const std::vector<double>& mu,
                              const BoundaryField& eta0,
                              const std::vector<BoundaryField>& f,
                              const std::vector<double>& t_list,
                              const PicardOptions& opts = {});

/// Default t list 2^-1 ... 2^-8.
std::vector<double> default_rate_t_list();

} // namespace elcell
