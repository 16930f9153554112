#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "elcell/measure.hpp"

namespace elcell {

// ---------------------------------------------------------------------------
// Monotone piecewise-cubic interpolation

/// Shape-preserving cubic Hermite interpolant (Fritsch-Carlson slopes). For
/// monotone data the interpolant is monotone on every interval, which is the
/// property the temperature inversion below depends on.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(std::vector<double> x, std::vector<double> y);

  double eval(double t) const;        // throws std::domain_error outside [front, back]
  double derivative(double t) const;
  double front() const { return x_.front(); }
  double back() const { return x_.back(); }
  double y_front() const { return y_.front(); }
  double y_back() const { return y_.back(); }
  std::size_t size() const { return x_.size(); }

  /// Inverse evaluation for strictly increasing data; std::nullopt when w
  /// falls outside [y_front, y_back].
  std::optional<double> try_invert(double w) const;

 private:
  std::vector<double> x_, y_, d_;
  std::size_t interval(double t) const;
};

// ---------------------------------------------------------------------------
// Reconstruction tables

enum class Provenance { boundary_voltage, interior_temperature };

/// One reconstructed sample: value ~ potential(p, key, x) - r for the global
/// normalization constant r. key holds the temperature data coordinate s for
/// boundary entries and the measured temperature t for interior entries.
struct TableEntry {
  std::vector<double> p;
  double key = 0.0;
  Point x{0.0, 0.0, 0.0};
  double value = 0.0;
  Provenance provenance = Provenance::boundary_voltage;
  bool ok = true;
  std::string note;  // set when a sample was flagged instead of fabricated
};

/// Collection of reconstructed samples sharing one normalization
/// reference: the entry at (z0, x0) is pinned to zero by construction.
class ReconstructionTable {
 public:
  ReconstructionTable() = default;
  ReconstructionTable(std::vector<double> ref_z, Point ref_x);

  /// Rejects duplicate sample keys (same provenance, p, key, x) and
  /// non-finite values on unflagged entries.
  void add(TableEntry e);
  void merge(const ReconstructionTable& other);

  const std::vector<TableEntry>& entries() const { return entries_; }
  const std::vector<double>& reference_z() const { return ref_z_; }
  const Point& reference_x() const { return ref_x_; }
  std::size_t ok_count() const;

 private:
  std::vector<double> ref_z_;
  Point ref_x_{0.0, 0.0, 0.0};
  std::vector<TableEntry> entries_;
};

struct OffsetStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

/// Per-sample offsets value - truth(p, key, x) over the unflagged entries.
/// When the reconstruction is exact up to the gauge constant, the offsets are
/// constant: the mean is the (arbitrary) constant and the spread is the
/// actual error measure.
OffsetStats offset_statistics(
    const ReconstructionTable& table,
    const std::function<double(const std::vector<double>&, double, const Point&)>&
        truth);

// ---------------------------------------------------------------------------
// Boundary reconstruction

/// Normalization reference: state values z0 (M concentrations plus
/// temperature) attained at boundary node x0.
struct ReferenceSpec {
  std::vector<double> z0;
  std::size_t x0_node = 0;
};

/// Tabulates the potential on boundary samples from voltage measurements
/// alone. For each state sample z and boundary node x, boundary data
/// attaining z at x and z0 at x0 is constructed with tent bumps of the given
/// radius and the voltage between x and x0 is recorded as the potential value
/// (normalizing the reference entry to zero). Samples whose forward solve
/// fails are flagged, not fabricated. The sample grid is the cartesian
/// product z_samples x x_nodes.
ReconstructionTable reconstruct_phi_boundary(
    const Laboratory& lab, const std::vector<std::vector<double>>& z_samples,
    const std::vector<std::size_t>& x_nodes, const ReferenceSpec& ref,
    double bump_radius, int threads = 1);

/// The reconstructed potential at fixed concentrations mu, sampled over a
/// temperature grid at every boundary node and interpolated monotonically in
/// the temperature coordinate. This is the reconstructed inverse-map input
/// the interior step steers with.
class BoundaryPotentialSlice {
 public:
  BoundaryPotentialSlice() = default;
  BoundaryPotentialSlice(const Grid& g, std::vector<double> mu,
                         std::vector<double> t_samples,
                         std::vector<std::vector<double>> phi_by_node,
                         double min_slope);

  const Grid& grid() const { return *grid_; }
  const std::vector<double>& mu() const { return mu_; }
  const std::vector<double>& t_samples() const { return t_samples_; }
  double min_slope() const { return min_slope_; }

  double phi_hat(double t, std::size_t boundary_ordinal) const;
  /// Temperature solving phi_hat(t, b) = w; nullopt outside the covered range.
  std::optional<double> try_invert(double w, std::size_t boundary_ordinal) const;
  /// Boundary temperature data realizing phi_hat(tau(x), x) = w at every
  /// boundary node; nullopt (with the blocking node reported) when any node
  /// cannot reach w inside the sampled range.
  std::optional<BoundaryField> invert_all(double w,
                                          std::size_t* blocking_node = nullptr) const;

 private:
  const Grid* grid_ = nullptr;
  std::vector<double> mu_;
  std::vector<double> t_samples_;
  std::vector<MonotoneCubic> per_node_;
  double min_slope_ = 0.0;
};

/// Builds a BoundaryPotentialSlice from measurements: for each temperature
/// sample, one constant-data experiment supplies all boundary voltage
/// differences and one probe experiment anchors them to the global
/// normalization. The reconstructed temperature slope is certified to stay
/// above half the declared ellipticity constant.
BoundaryPotentialSlice reconstruct_boundary_slice(
    const Laboratory& lab, const std::vector<double>& mu, double t_lo,
    double t_hi, int count, const ReferenceSpec& ref, double bump_radius);

// ---------------------------------------------------------------------------
// Boundary gradients

struct BoundaryGradients {
  std::vector<double> state_partial;  // M concentration partials then the temperature partial
  Point tangential{0.0, 0.0, 0.0};    // boundary-tangential position gradient
  std::array<bool, 3> one_sided{false, false, false};
  double delta = 0.0;                 // finite-difference step actually used
};

/// State partials by centred differences of reconstructed boundary values in
/// z, tangential position gradient by differences across neighbouring
/// boundary nodes (one-sided and flagged at face edges). delta is relative
/// to the sample scale, default 1e-3.
BoundaryGradients reconstruct_phi_gradients_boundary(
    const Laboratory& lab, const std::vector<double>& z, std::size_t x_node,
    const ReferenceSpec& ref, double bump_radius, double delta = 1e-3);

/// The remaining normal component of the position gradient at a boundary
/// node, from one constant-concentration experiment: with constant species
/// data the species gradients vanish, so the normal derivative of the
/// substituted potential splits into the temperature term and the sought
/// position term. The substituted potential is rebuilt from measured
/// voltages and the public permittivity/charge data. ds_phi is the
/// reconstructed temperature partial at (z, x); tau_override lets callers
/// cross-check with any temperature data attaining z's temperature at x.
double recover_normal_x_gradient(const Laboratory& lab,
                                 const std::vector<double>& z,
                                 std::size_t x_node, double ds_phi,
                                 const BoundaryField* tau_override = nullptr);

// ---------------------------------------------------------------------------
// Interior reconstruction

struct InteriorResult {
  ReconstructionTable table;      // entries (mu, measured t, y) -> steered value
  std::vector<double> skipped_s;  // targets outside the slice's covered range
  double omega0_at_probe = 0.0;
};

/// Reconstructs the potential at an interior point y: solves the public
/// charge problem once to learn the interior offset omega0(y), then for each
/// target s steers the substituted potential at y to s by boundary
/// temperature data built from the reconstructed slice, probes the
/// temperature at y, and records the flipped pair (measured t, value s).
/// Out-of-range targets are skipped and reported, never extrapolated.
InteriorResult reconstruct_phi_interior(const Laboratory& lab,
                                        const BoundaryPotentialSlice& slice,
                                        const std::vector<double>& s_samples,
                                        const Point& y,
                                        const ReferenceSpec& ref);

// ---------------------------------------------------------------------------
// Diffusion fitting

/// Grid-independent experiment descriptor: boundary data as closures over
/// position, so the same experiment can be realized on the measurement grid
/// and on a different inversion grid.
struct DataRecipe {
  std::vector<std::function<double(const Point&)>> gamma;
  std::function<double(const Point&)> tau;
};

Experiment realize(const DataRecipe& recipe, const Grid& g);

/// Measured species fluxes for a list of recipes, kept on the grid they were
/// measured on.
struct FluxDataset {
  const Grid* data_grid = nullptr;
  std::vector<DataRecipe> recipes;
  std::vector<std::vector<BoundaryField>> flux;  // [recipe][species]
};

FluxDataset measure_flux_dataset(const Laboratory& lab,
                                 const std::vector<DataRecipe>& recipes);

/// Least-squares recovery of a parametrized diffusion family from flux data.
/// make_bundle must yield a valid bundle (ellipticity declared) for every
/// theta inside theta_box.
struct DiffusionFitProblem {
  std::vector<double> theta_init;
  std::vector<std::array<double, 2>> theta_box;
  std::function<ModelBundle(const std::vector<double>&)> make_bundle;
  FluxDataset data;
  const Grid* fit_grid = nullptr;
  PicardOptions solver;
};

struct FitOptions {
  int max_iterations = 50;
  double loss_decrease_tol = 1e-10;  // relative, between accepted iterations
  double gradient_tol = 1e-8;        // on |J^T r|_2
  double fd_step = 1e-4;             // relative Jacobian step
  double lm_init = 1e-3;
  int max_rejects = 15;
  double rank_tol = 1e-7;            // sigma_min/sigma_max identifiability gate
  int threads = 1;
};

struct FitIteration {
  std::vector<double> theta;
  double loss = 0.0;
  double lm = 0.0;
};

struct FitReport {
  std::vector<FitIteration> trace;  // accepted iterations, loss non-increasing
  double final_loss = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  double jacobian_condition = 0.0;
  std::string note;
};

/// Gauss-Newton with Levenberg damping on the flux-mismatch loss. The
/// Jacobian uses forward finite differences in theta; a rank-deficient
/// Jacobian at theta_init raises a NumericalError naming the null direction;
/// forward-solve failures at a trial theta reject the step and raise the
/// damping.
std::pair<std::vector<double>, FitReport> fit_diffusion(
    const DiffusionFitProblem& problem, const FitOptions& opts = {});

} // namespace elcell
