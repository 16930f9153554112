#include "elcell/inverse.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "elcell/elliptic.hpp"
#include "elcell/util.hpp"

namespace elcell {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

} // namespace

// ---------------------------------------------------------------------------
// MonotoneCubic

MonotoneCubic::MonotoneCubic(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
  require(x_.size() == y_.size() && x_.size() >= 2,
          "monotone cubic needs at least two matching samples");
  for (std::size_t k = 0; k + 1 < x_.size(); ++k)
    require(x_[k + 1] > x_[k], "monotone cubic abscissae must increase");
  for (double v : y_)
    require(std::isfinite(v), "monotone cubic ordinates must be finite");

  const std::size_t n = x_.size();
  d_.assign(n, 0.0);
  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x_[k + 1] - x_[k];
    delta[k] = (y_[k + 1] - y_[k]) / h[k];
  }

  if (n == 2) {
    d_[0] = d_[1] = delta[0];
    return;
  }

  // Fritsch-Carlson slopes: weighted harmonic mean where the secants agree
  // in sign, zero otherwise; shape-preserving three-point rule at the ends.
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] * delta[k] <= 0.0) {
      d_[k] = 0.0;
    } else {
      const double w1 = 2.0 * h[k] + h[k - 1];
      const double w2 = h[k] + 2.0 * h[k - 1];
      d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
  }
  auto end_slope = [](double h0, double h1, double d0, double d1) {
    double d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d * d0 <= 0.0) return 0.0;
    if (d0 * d1 <= 0.0 && std::abs(d) > 3.0 * std::abs(d0)) return 3.0 * d0;
    return d;
  };
  d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
  d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
}

std::size_t MonotoneCubic::interval(double t) const {
  if (t < x_.front() || t > x_.back())
    throw std::domain_error("monotone cubic evaluated outside its range");
  const auto it = std::upper_bound(x_.begin(), x_.end(), t);
  std::size_t k = static_cast<std::size_t>(it - x_.begin());
  if (k > 0) --k;
  if (k + 1 >= x_.size()) k = x_.size() - 2;
  return k;
}

double MonotoneCubic::eval(double t) const {
  const std::size_t k = interval(t);
  const double h = x_[k + 1] - x_[k];
  const double s = (t - x_[k]) / h;
  const double s2 = s * s, s3 = s2 * s;
  return (2.0 * s3 - 3.0 * s2 + 1.0) * y_[k] + (s3 - 2.0 * s2 + s) * h * d_[k] +
         (-2.0 * s3 + 3.0 * s2) * y_[k + 1] + (s3 - s2) * h * d_[k + 1];
}

double MonotoneCubic::derivative(double t) const {
  const std::size_t k = interval(t);
  const double h = x_[k + 1] - x_[k];
  const double s = (t - x_[k]) / h;
  const double s2 = s * s;
  const double dds = (6.0 * s2 - 6.0 * s) * (y_[k] - y_[k + 1]) +
                     h * ((3.0 * s2 - 4.0 * s + 1.0) * d_[k] +
                          (3.0 * s2 - 2.0 * s) * d_[k + 1]);
  return dds / h;
}

std::optional<double> MonotoneCubic::try_invert(double w) const {
  for (std::size_t k = 0; k + 1 < y_.size(); ++k)
    if (!(y_[k + 1] > y_[k]))
      throw NumericalError("monotone cubic inversion needs increasing data");
  if (w < y_.front() || w > y_.back()) return std::nullopt;
  if (w == y_.front()) return x_.front();
  if (w == y_.back()) return x_.back();

  // Bracket by the sample ordinates, then safeguarded Newton inside it.
  const auto it = std::upper_bound(y_.begin(), y_.end(), w);
  std::size_t k = static_cast<std::size_t>(it - y_.begin());
  if (k > 0) --k;
  if (k + 1 >= y_.size()) k = y_.size() - 2;

  double lo = x_[k], hi = x_[k + 1];
  double t = 0.5 * (lo + hi);
  const double tol = 1e-13 * std::max(1.0, std::abs(w));
  for (int it2 = 0; it2 < 200; ++it2) {
    const double f = eval(t) - w;
    if (std::abs(f) <= tol) return t;
    if (f > 0.0)
      hi = t;
    else
      lo = t;
    const double dp = derivative(t);
    double tn = dp > 0.0 ? t - f / dp : 0.5 * (lo + hi);
    if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
    if (tn == t) tn = 0.5 * (lo + hi);
    t = tn;
    if (hi - lo < 1e-15 * std::max(1.0, std::abs(hi))) return t;
  }
  return t;
}

// ---------------------------------------------------------------------------
// ReconstructionTable

ReconstructionTable::ReconstructionTable(std::vector<double> ref_z, Point ref_x)
    : ref_z_(std::move(ref_z)), ref_x_(ref_x) {}

void ReconstructionTable::add(TableEntry e) {
  if (e.ok) {
    require(std::isfinite(e.value) && std::isfinite(e.key),
            "reconstruction entry has a non-finite value");
    for (double v : e.p)
      require(std::isfinite(v), "reconstruction entry has a non-finite state");
  }
  for (const auto& have : entries_) {
    if (have.provenance == e.provenance && have.key == e.key && have.p == e.p &&
        have.x == e.x)
      throw std::invalid_argument("duplicate reconstruction sample key");
  }
  entries_.push_back(std::move(e));
}

void ReconstructionTable::merge(const ReconstructionTable& other) {
  require(other.ref_z_ == ref_z_ && other.ref_x_ == ref_x_,
          "cannot merge tables with different normalization references");
  for (const auto& e : other.entries_) add(e);
}

std::size_t ReconstructionTable::ok_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.ok) ++n;
  return n;
}

OffsetStats offset_statistics(
    const ReconstructionTable& table,
    const std::function<double(const std::vector<double>&, double, const Point&)>&
        truth) {
  OffsetStats st;
  std::vector<double> offs;
  for (const auto& e : table.entries()) {
    if (!e.ok) continue;
    offs.push_back(e.value - truth(e.p, e.key, e.x));
  }
  st.count = offs.size();
  if (offs.empty()) return st;
  double sum = 0.0;
  for (double o : offs) sum += o;
  st.mean = sum / static_cast<double>(offs.size());
  double ss = 0.0;
  for (double o : offs) ss += sqr(o - st.mean);
  st.stddev = std::sqrt(ss / static_cast<double>(offs.size()));
  return st;
}

// ---------------------------------------------------------------------------
// Boundary reconstruction

namespace {

void check_reference(const Laboratory& lab, const ReferenceSpec& ref,
                     double bump_radius) {
  require(ref.z0.size() == static_cast<std::size_t>(lab.species()) + 1,
          "reference state needs M concentrations plus a temperature");
  require(ref.x0_node < lab.grid().node_count() &&
              lab.grid().is_boundary(ref.x0_node),
          "reference node must be a boundary node");
  require(bump_radius > 0.0, "bump radius must be positive");
}

// Reconstructed potential value at one boundary sample: boundary data
// attaining z at the node and z0 at the reference node, then the voltage
// between the two nodes.
double probe_voltage(const Laboratory& lab, const std::vector<double>& z,
                     std::size_t node, const ReferenceSpec& ref,
                     double bump_radius) {
  const Experiment e =
      make_probe_data(lab.grid(), node, ref.x0_node, z, ref.z0, bump_radius);
  return lab.voltage_between(e, node, ref.x0_node).value;
}

std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j)
    out[static_cast<std::size_t>(j)] =
        lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(count - 1);
  return out;
}

} // namespace

ReconstructionTable reconstruct_phi_boundary(
    const Laboratory& lab, const std::vector<std::vector<double>>& z_samples,
    const std::vector<std::size_t>& x_nodes, const ReferenceSpec& ref,
    double bump_radius, int threads) {
  const Grid& g = lab.grid();
  check_reference(lab, ref, bump_radius);
  const std::size_t width = ref.z0.size();
  for (const auto& z : z_samples)
    require(z.size() == width, "state sample width must match the reference");
  for (std::size_t x : x_nodes)
    require(x < g.node_count() && g.is_boundary(x),
            "potential samples live on boundary nodes");

  const std::size_t total = z_samples.size() * x_nodes.size();
  std::vector<TableEntry> slots(total);
  parallel_for(total, threads, [&](std::size_t k) {
    const auto& z = z_samples[k / x_nodes.size()];
    const std::size_t x = x_nodes[k % x_nodes.size()];
    TableEntry e;
    e.p.assign(z.begin(), z.end() - 1);
    e.key = z.back();
    e.x = g.position(x);
    e.provenance = Provenance::boundary_voltage;
    if (x == ref.x0_node && z != ref.z0) {
      e.ok = false;
      e.note = "sample collides with the normalization reference node";
    } else {
      try {
        e.value = probe_voltage(lab, z, x, ref, bump_radius);
      } catch (const NumericalError& err) {
        e.ok = false;
        e.note = err.what();
      }
    }
    slots[k] = std::move(e);
  });

  ReconstructionTable table(ref.z0, g.position(ref.x0_node));
  for (auto& e : slots) table.add(std::move(e));
  return table;
}

BoundaryPotentialSlice::BoundaryPotentialSlice(
    const Grid& g, std::vector<double> mu, std::vector<double> t_samples,
    std::vector<std::vector<double>> phi_by_node, double min_slope)
    : grid_(&g),
      mu_(std::move(mu)),
      t_samples_(std::move(t_samples)),
      min_slope_(min_slope) {
  require(!mu_.empty(), "slice needs at least one species");
  require(phi_by_node.size() == g.boundary_count(),
          "slice needs one temperature profile per boundary node");
  per_node_.reserve(phi_by_node.size());
  for (auto& row : phi_by_node) {
    require(row.size() == t_samples_.size(),
            "slice profile length must match the temperature samples");
    per_node_.emplace_back(t_samples_, std::move(row));
  }
}

double BoundaryPotentialSlice::phi_hat(double t,
                                       std::size_t boundary_ordinal) const {
  require(boundary_ordinal < per_node_.size(), "boundary ordinal out of range");
  return per_node_[boundary_ordinal].eval(t);
}

std::optional<double> BoundaryPotentialSlice::try_invert(
    double w, std::size_t boundary_ordinal) const {
  require(boundary_ordinal < per_node_.size(), "boundary ordinal out of range");
  return per_node_[boundary_ordinal].try_invert(w);
}

std::optional<BoundaryField> BoundaryPotentialSlice::invert_all(
    double w, std::size_t* blocking_node) const {
  BoundaryField tau(*grid_);
  for (std::size_t b = 0; b < per_node_.size(); ++b) {
    const auto t = per_node_[b].try_invert(w);
    if (!t) {
      if (blocking_node) *blocking_node = grid_->boundary_ids()[b];
      return std::nullopt;
    }
    tau[b] = *t;
  }
  return tau;
}

BoundaryPotentialSlice reconstruct_boundary_slice(const Laboratory& lab,
                                                  const std::vector<double>& mu,
                                                  double t_lo, double t_hi,
                                                  int count,
                                                  const ReferenceSpec& ref,
                                                  double bump_radius) {
  const Grid& g = lab.grid();
  check_reference(lab, ref, bump_radius);
  require(mu.size() == static_cast<std::size_t>(lab.species()),
          "slice concentrations need one value per species");
  require(count >= 2, "slice needs at least two temperature samples");
  require(t_lo < t_hi, "slice temperature range must be nonempty");

  // Anchor the per-node voltage differences at the boundary node farthest
  // from the reference, where the probe bumps cannot overlap it.
  const Point x0 = g.position(ref.x0_node);
  std::size_t anchor = ref.x0_node;
  double best = -1.0;
  for (std::size_t id : g.boundary_ids()) {
    const Point p = g.position(id);
    const double d2 = sqr(p[0] - x0[0]) + sqr(p[1] - x0[1]) + sqr(p[2] - x0[2]);
    if (d2 > best) {
      best = d2;
      anchor = id;
    }
  }
  const std::size_t anchor_ord = g.boundary_ordinal(anchor);

  const std::vector<double> t_samples = linspace(t_lo, t_hi, count);
  std::vector<std::vector<double>> phi_by_node(
      g.boundary_count(), std::vector<double>(t_samples.size()));

  std::vector<double> z(mu);
  z.push_back(0.0);
  Experiment flat;
  flat.gamma.reserve(mu.size());
  for (double m : mu) flat.gamma.emplace_back(g, m);
  for (std::size_t j = 0; j < t_samples.size(); ++j) {
    const double t = t_samples[j];
    z.back() = t;
    // One probe experiment pins the anchor value to the global
    // normalization, one constant experiment spreads it to every node.
    const double va = probe_voltage(lab, z, anchor, ref, bump_radius);
    flat.tau = BoundaryField(g, t);
    const BoundaryField bv = lab.boundary_voltages(flat, ref.x0_node).value;
    const double shift = va - bv[anchor_ord];
    for (std::size_t b = 0; b < bv.size(); ++b)
      phi_by_node[b][j] = bv[b] + shift;
  }

  double min_slope = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < phi_by_node.size(); ++b)
    for (std::size_t j = 0; j + 1 < t_samples.size(); ++j)
      min_slope = std::min(min_slope,
                           (phi_by_node[b][j + 1] - phi_by_node[b][j]) /
                               (t_samples[j + 1] - t_samples[j]));
  if (!(min_slope >= 0.5 * lab.lambda())) {
    std::ostringstream msg;
    msg << "reconstructed temperature slope " << min_slope
        << " fell below half the ellipticity constant " << lab.lambda();
    throw NumericalError(msg.str());
  }

  return BoundaryPotentialSlice(g, mu, t_samples, std::move(phi_by_node),
                                min_slope);
}

// ---------------------------------------------------------------------------
// Boundary gradients

BoundaryGradients reconstruct_phi_gradients_boundary(
    const Laboratory& lab, const std::vector<double>& z, std::size_t x_node,
    const ReferenceSpec& ref, double bump_radius, double delta) {
  const Grid& g = lab.grid();
  check_reference(lab, ref, bump_radius);
  require(z.size() == ref.z0.size(), "state width must match the reference");
  require(x_node < g.node_count() && g.is_boundary(x_node),
          "gradients are reconstructed at boundary nodes");
  require(x_node != ref.x0_node,
          "gradients at the reference node need a separate reference");
  require(delta > 0.0, "finite-difference step must be positive");

  BoundaryGradients out;
  out.delta = delta;

  // State partials: centred differences of the reconstructed value in each
  // state coordinate, step relative to the coordinate scale.
  out.state_partial.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double dj = delta * std::max(1.0, std::abs(z[j]));
    std::vector<double> zp(z), zm(z);
    zp[j] += dj;
    zm[j] -= dj;
    out.state_partial[j] = (probe_voltage(lab, zp, x_node, ref, bump_radius) -
                            probe_voltage(lab, zm, x_node, ref, bump_radius)) /
                           (2.0 * dj);
  }

  // Tangential position gradient: differences of the reconstructed value
  // across neighbouring boundary nodes on the owning face.
  const auto uk = g.unpack(x_node);
  const int face = g.face_axis(x_node);
  double center = 0.0;
  bool have_center = false;
  for (int ax = 0; ax < g.dim(); ++ax) {
    if (ax == face) continue;
    const double h = g.spacing(ax);
    auto neighbour = [&](int offset) {
      auto u2 = uk;
      u2[ax] += offset;
      return g.index(u2[0], u2[1], u2[2]);
    };
    const int idx = uk[ax];
    const int last = g.nodes_along(ax) - 1;
    if (idx > 0 && idx < last) {
      out.tangential[ax] = (probe_voltage(lab, z, neighbour(+1), ref, bump_radius) -
                            probe_voltage(lab, z, neighbour(-1), ref, bump_radius)) /
                           (2.0 * h);
    } else {
      const int s = idx == 0 ? +1 : -1;
      if (!have_center) {
        center = probe_voltage(lab, z, x_node, ref, bump_radius);
        have_center = true;
      }
      const double u1 = probe_voltage(lab, z, neighbour(s), ref, bump_radius);
      const double u2 = probe_voltage(lab, z, neighbour(2 * s), ref, bump_radius);
      out.tangential[ax] = s * (-3.0 * center + 4.0 * u1 - u2) / (2.0 * h);
      out.one_sided[static_cast<std::size_t>(ax)] = true;
    }
  }
  return out;
}

double recover_normal_x_gradient(const Laboratory& lab,
                                 const std::vector<double>& z,
                                 std::size_t x_node, double ds_phi,
                                 const BoundaryField* tau_override) {
  const Grid& g = lab.grid();
  const std::size_t species = static_cast<std::size_t>(lab.species());
  require(z.size() == species + 1,
          "state needs M concentrations plus a temperature");
  require(x_node < g.node_count() && g.is_boundary(x_node),
          "the normal gradient is recovered at a boundary node");
  if (!(std::abs(ds_phi) >= 0.5 * lab.lambda()))
    throw NumericalError(
        "temperature slope estimate fell below half the ellipticity constant");

  Experiment e;
  e.gamma.reserve(species);
  for (std::size_t i = 0; i < species; ++i) e.gamma.emplace_back(g, z[i]);
  if (tau_override) {
    require(tau_override->grid == &g, "temperature data lives on the lab grid");
    const double at_x = tau_override->at_node(x_node);
    require(std::abs(at_x - z.back()) <=
                1e-12 * std::max(1.0, std::abs(z.back())),
            "temperature data must attain the sample temperature at the node");
    e.tau = *tau_override;
  } else {
    e.tau = BoundaryField(g, z.back());
  }

  // Constant species data makes the species gradients vanish, so the normal
  // derivative of the substituted field splits into the temperature term and
  // the position term. The substituted field is rebuilt from the measured
  // boundary voltages with the public permittivity and charges.
  const Measured<CauchyRecord> rec = lab.cauchy(e, true);
  const std::size_t bord = g.boundary_ordinal(x_node);
  const double nt_temp = rec.value.temp_flux->v[bord];

  const BoundaryField bv = lab.boundary_voltages(e, x_node).value;
  double qdot = 0.0;
  for (std::size_t i = 0; i < species; ++i) qdot += lab.charge()[i] * z[i];
  const ScalarField eps = lab.permittivity().sample(g);
  const ScalarField sigma_hat = l_eps_inverse(
      eps, ScalarField(g, qdot), bv, lab.options().linear_tol);
  const double nt_sigma = normal_trace(gradient(sigma_hat))[bord];

  return nt_sigma - ds_phi * nt_temp;
}

// ---------------------------------------------------------------------------
// Interior reconstruction

InteriorResult reconstruct_phi_interior(const Laboratory& lab,
                                        const BoundaryPotentialSlice& slice,
                                        const std::vector<double>& s_samples,
                                        const Point& y,
                                        const ReferenceSpec& ref) {
  const Grid& g = lab.grid();
  require(&slice.grid() == &g, "slice and laboratory must share the grid");
  require(g.contains(y), "probe point must lie inside the domain");
  require(slice.mu().size() == static_cast<std::size_t>(lab.species()),
          "slice species count must match the laboratory");
  require(ref.z0.size() == static_cast<std::size_t>(lab.species()) + 1,
          "reference state needs M concentrations plus a temperature");

  const std::vector<double>& mu = slice.mu();

  // Interior offset of the substituted field under constant boundary data:
  // the public charge problem with zero boundary values. Constant data w
  // then produces sigma = omega0 + w exactly.
  double qdot = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) qdot += lab.charge()[i] * mu[i];
  const ScalarField eps = lab.permittivity().sample(g);
  const ScalarField omega0 = l_eps_inverse(
      eps, ScalarField(g, qdot), BoundaryField(g, 0.0), lab.options().linear_tol);
  const double w0y = interpolate(omega0, y);

  InteriorResult out;
  out.omega0_at_probe = w0y;
  out.table = ReconstructionTable(ref.z0, g.position(ref.x0_node));

  Experiment e;
  e.gamma.reserve(mu.size());
  for (double m : mu) e.gamma.emplace_back(g, m);

  for (double s : s_samples) {
    // Steer the substituted field at y to the target: boundary temperature
    // data whose reconstructed boundary potential is the constant s - omega0(y).
    const auto tau = slice.invert_all(s - w0y);
    if (!tau) {
      out.skipped_s.push_back(s);
      continue;
    }
    e.tau = *tau;
    TableEntry entry;
    entry.p = mu;
    entry.x = y;
    entry.value = s;
    entry.provenance = Provenance::interior_temperature;
    try {
      entry.key = lab.probe_temperatures(e, {y}).value[0];
    } catch (const NumericalError& err) {
      entry.ok = false;
      entry.key = s;  // placeholder keeping flagged entries distinct
      entry.note = err.what();
    }
    out.table.add(std::move(entry));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diffusion fitting

Experiment realize(const DataRecipe& recipe, const Grid& g) {
  require(!recipe.gamma.empty(), "recipe needs at least one species");
  require(static_cast<bool>(recipe.tau), "recipe needs temperature data");
  Experiment e;
  e.gamma.reserve(recipe.gamma.size());
  for (const auto& fn : recipe.gamma) {
    require(static_cast<bool>(fn), "recipe species data must be callable");
    e.gamma.push_back(sample_boundary(g, fn));
  }
  e.tau = sample_boundary(g, recipe.tau);
  return e;
}

FluxDataset measure_flux_dataset(const Laboratory& lab,
                                 const std::vector<DataRecipe>& recipes) {
  FluxDataset ds;
  ds.data_grid = &lab.grid();
  ds.recipes = recipes;
  ds.flux.reserve(recipes.size());
  for (const auto& r : recipes) {
    require(r.gamma.size() == static_cast<std::size_t>(lab.species()),
            "recipe species count must match the laboratory");
    const Experiment e = realize(r, lab.grid());
    ds.flux.push_back(lab.cauchy(e, false).value.flux);
  }
  return ds;
}

namespace {

struct FitContext {
  const DiffusionFitProblem* prob = nullptr;
  std::vector<Experiment> experiments;    // recipes realized on the fit grid
  std::vector<bool> constant_data;        // per experiment: constant species data
  std::vector<std::vector<double>> constants;
  std::vector<std::size_t> data_ordinal;  // fit ordinal -> data-grid ordinal
  std::vector<double> weight_sqrt;        // per fit boundary ordinal
};

// Predicted-minus-measured boundary fluxes at theta, stacked over
// experiments, species and fit-grid boundary nodes, weighted so the squared
// sum approximates the boundary L2 mismatch.
std::vector<double> fit_residual(const FitContext& ctx,
                                 const std::vector<double>& theta) {
  const DiffusionFitProblem& prob = *ctx.prob;
  ModelBundle bundle = prob.make_bundle(theta);
  bundle.check();
  const std::size_t species = static_cast<std::size_t>(bundle.species);
  const std::size_t nb = ctx.weight_sqrt.size();

  std::vector<double> r;
  r.reserve(ctx.experiments.size() * species * nb);
  for (std::size_t k = 0; k < ctx.experiments.size(); ++k) {
    const Experiment& e = ctx.experiments[k];
    const SystemState state =
        (bundle.source_free() && ctx.constant_data[k])
            ? forward_constant_bc(bundle, ctx.constants[k], e.tau,
                                  prob.solver.linear_tol, prob.solver)
            : forward_solve(bundle, e.gamma, e.tau, prob.solver);
    const CauchyRecord rec = cauchy_record(state, bundle, false);
    for (std::size_t i = 0; i < species; ++i) {
      const BoundaryField& data = prob.data.flux[k][i];
      for (std::size_t b = 0; b < nb; ++b)
        r.push_back(ctx.weight_sqrt[b] *
                    (rec.flux[i][b] - data[ctx.data_ordinal[b]]));
    }
  }
  return r;
}

double loss_of(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

std::vector<double> clamp_to_box(
    std::vector<double> theta,
    const std::vector<std::array<double, 2>>& box) {
  if (box.empty()) return theta;
  for (std::size_t j = 0; j < theta.size(); ++j)
    theta[j] = std::min(std::max(theta[j], box[j][0]), box[j][1]);
  return theta;
}

Eigen::MatrixXd fit_jacobian(const FitContext& ctx,
                             const std::vector<double>& theta,
                             const std::vector<double>& r0,
                             const FitOptions& opts) {
  const DiffusionFitProblem& prob = *ctx.prob;
  const std::size_t np = theta.size();
  Eigen::MatrixXd J(static_cast<Eigen::Index>(r0.size()),
                    static_cast<Eigen::Index>(np));
  std::vector<std::vector<double>> cols(np);
  std::vector<double> steps(np);
  parallel_for(np, opts.threads, [&](std::size_t j) {
    double h = opts.fd_step * std::max(std::abs(theta[j]), 1.0);
    // Step backwards when a forward step would leave the box.
    if (!prob.theta_box.empty() && theta[j] + h > prob.theta_box[j][1]) h = -h;
    steps[j] = h;
    std::vector<double> tj(theta);
    tj[j] += h;
    cols[j] = fit_residual(ctx, tj);
  });
  for (std::size_t j = 0; j < np; ++j)
    for (std::size_t i = 0; i < r0.size(); ++i)
      J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (cols[j][i] - r0[i]) / steps[j];
  return J;
}

} // namespace

std::pair<std::vector<double>, FitReport> fit_diffusion(
    const DiffusionFitProblem& problem, const FitOptions& opts) {
  require(problem.fit_grid != nullptr, "fit problem needs an inversion grid");
  require(problem.data.data_grid != nullptr, "fit problem needs measured data");
  require(static_cast<bool>(problem.make_bundle),
          "fit problem needs a model family");
  require(!problem.theta_init.empty(), "fit problem needs parameters");
  require(problem.theta_box.empty() ||
              problem.theta_box.size() == problem.theta_init.size(),
          "parameter box size must match the parameter count");
  require(!problem.data.recipes.empty() &&
              problem.data.recipes.size() == problem.data.flux.size(),
          "fit problem needs one flux record per recipe");
  if (!problem.theta_box.empty()) {
    for (std::size_t j = 0; j < problem.theta_init.size(); ++j)
      require(problem.theta_init[j] >= problem.theta_box[j][0] &&
                  problem.theta_init[j] <= problem.theta_box[j][1],
              "initial parameters must lie inside the box");
  }

  const Grid& fg = *problem.fit_grid;
  const Grid& dg = *problem.data.data_grid;

  FitContext ctx;
  ctx.prob = &problem;

  // Realize each recipe on the fit grid and detect constant species data,
  // which unlocks the closed-form forward path.
  for (const auto& recipe : problem.data.recipes) {
    Experiment e = realize(recipe, fg);
    bool constant = true;
    std::vector<double> consts;
    for (const auto& gfield : e.gamma) {
      consts.push_back(gfield.v.empty() ? 0.0 : gfield.v.front());
      for (double v : gfield.v)
        if (v != consts.back()) {
          constant = false;
          break;
        }
      if (!constant) break;
    }
    ctx.constant_data.push_back(constant);
    ctx.constants.push_back(std::move(consts));
    ctx.experiments.push_back(std::move(e));
  }

  // Fit-grid boundary nodes must coincide with data-grid nodes; fluxes are
  // compared at shared positions, never interpolated.
  ctx.data_ordinal.reserve(fg.boundary_count());
  ctx.weight_sqrt.reserve(fg.boundary_count());
  for (std::size_t id : fg.boundary_ids()) {
    const Point p = fg.position(id);
    std::array<int, 3> idx{0, 0, 0};
    for (int ax = 0; ax < dg.dim(); ++ax) {
      const double t = (p[ax] - dg.lo(ax)) / dg.spacing(ax);
      idx[ax] = static_cast<int>(std::lround(t));
      require(idx[ax] >= 0 && idx[ax] < dg.nodes_along(ax) &&
                  std::abs(t - static_cast<double>(idx[ax])) <= 1e-9,
              "fit-grid boundary nodes must coincide with data-grid nodes");
    }
    const std::size_t did = dg.index(idx[0], idx[1], idx[2]);
    require(dg.is_boundary(did),
            "fit-grid boundary nodes must map to data-grid boundary nodes");
    ctx.data_ordinal.push_back(dg.boundary_ordinal(did));
    ctx.weight_sqrt.push_back(std::sqrt(fg.boundary_weight(id)));
  }
  for (const auto& per_recipe : problem.data.flux)
    for (const auto& f : per_recipe)
      require(f.grid == &dg, "flux data must live on the data grid");

  FitReport rep;
  std::vector<double> theta = problem.theta_init;
  std::vector<double> r = fit_residual(ctx, theta);
  double loss = loss_of(r);
  double lm = opts.lm_init;
  rep.trace.push_back({theta, loss, lm});

  Eigen::MatrixXd J = fit_jacobian(ctx, theta, r, opts);

  // Identifiability gate: a numerically rank-deficient Jacobian at the start
  // means some parameter direction does not move the data at all.
  {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    rep.jacobian_condition =
        smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    if (!(smin > opts.rank_tol * smax)) {
      const Eigen::VectorXd dir = svd.matrixV().col(sv.size() - 1);
      std::ostringstream msg;
      msg << "parameters are not identifiable from this data; null direction (";
      for (Eigen::Index j = 0; j < dir.size(); ++j) {
        if (j) msg << ", ";
        msg << format_double(dir(j));
      }
      msg << ")";
      throw NumericalError(msg.str());
    }
  }

  const auto grad_of = [](const Eigen::MatrixXd& jm,
                          const std::vector<double>& rr) {
    Eigen::Map<const Eigen::VectorXd> m(rr.data(),
                                        static_cast<Eigen::Index>(rr.size()));
    return Eigen::VectorXd(jm.transpose() * m);
  };

  Eigen::VectorXd grad = grad_of(J, r);
  rep.gradient_norm = grad.norm();
  if (rep.gradient_norm <= opts.gradient_tol || loss == 0.0) {
    rep.converged = true;
    rep.final_loss = loss;
    return {theta, rep};
  }

  int accepted = 0;
  while (accepted < opts.max_iterations) {
    const Eigen::MatrixXd jtj = J.transpose() * J;
    bool stepped = false;
    int rejects = 0;
    while (rejects <= opts.max_rejects) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lm * jtj.diagonal();
      const Eigen::VectorXd delta = a.ldlt().solve(-grad);
      std::vector<double> trial(theta);
      for (std::size_t j = 0; j < trial.size(); ++j)
        trial[j] += delta(static_cast<Eigen::Index>(j));
      trial = clamp_to_box(std::move(trial), problem.theta_box);
      if (trial == theta) {
        lm = std::min(lm * 10.0, 1e14);
        ++rejects;
        continue;
      }
      double trial_loss = std::numeric_limits<double>::infinity();
      std::vector<double> trial_r;
      try {
        trial_r = fit_residual(ctx, trial);
        trial_loss = loss_of(trial_r);
      } catch (const NumericalError&) {
        // Forward solve failed at the trial point: reject and raise damping.
      }
      if (trial_loss < loss) {
        const double rel = (loss - trial_loss) / std::max(loss, 1e-300);
        theta = std::move(trial);
        r = std::move(trial_r);
        loss = trial_loss;
        lm = std::max(lm / 3.0, 1e-14);
        ++accepted;
        rep.trace.push_back({theta, loss, lm});
        if (rel < opts.loss_decrease_tol || loss == 0.0) rep.converged = true;
        stepped = true;
        break;
      }
      lm = std::min(lm * 10.0, 1e14);
      ++rejects;
    }
    if (!stepped) {
      rep.note = "no acceptable step within the reject budget";
      break;
    }
    if (rep.converged) break;

    J = fit_jacobian(ctx, theta, r, opts);
    grad = grad_of(J, r);
    rep.gradient_norm = grad.norm();
    if (rep.gradient_norm <= opts.gradient_tol) {
      rep.converged = true;
      break;
    }
  }

  rep.iterations = accepted;
  rep.final_loss = loss;
  if (!rep.converged && rep.note.empty())
    rep.note = "iteration budget exhausted";
  return {theta, rep};
}

} // namespace elcell
