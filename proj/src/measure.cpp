#include "elcell/measure.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "elcell/elliptic.hpp"
#include "elcell/util.hpp"

namespace elcell {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

// Diffusion coefficient of one species evaluated on a solved state.
ScalarField diffusion_on_state(const SystemState& state,
                               const DiffusionModel& d) {
  const Grid& g = *state.grid;
  ScalarField a(g);
  std::vector<double> p(state.c.size());
  for (std::size_t id = 0; id < g.node_count(); ++id) {
    for (std::size_t j = 0; j < state.c.size(); ++j) p[j] = state.c[j][id];
    a[id] = d.value(p, state.T[id], g.position(id));
  }
  return a;
}

} // namespace

CauchyRecord cauchy_record(const SystemState& state, const ModelBundle& bundle,
                           bool with_temp_flux) {
  require(static_cast<int>(state.c.size()) == bundle.species,
          "cauchy_record: state and bundle species counts differ");
  CauchyRecord rec;
  rec.gamma = state.gamma;
  rec.tau = state.tau;
  rec.flux.reserve(state.c.size());
  for (std::size_t i = 0; i < state.c.size(); ++i) {
    const ScalarField a = diffusion_on_state(state, bundle.diffusion[i]);
    rec.flux.push_back(boundary_flux(a, state.c[i]));
  }
  if (with_temp_flux) rec.temp_flux = normal_trace(gradient(state.T));
  return rec;
}

double voltage(const SystemState& state, std::size_t x_node, std::size_t y_node) {
  const Grid& g = *state.grid;
  require(x_node < g.node_count() && y_node < g.node_count(),
          "voltage: node id out of range");
  require(g.is_boundary(x_node) && g.is_boundary(y_node),
          "voltage: both probes must be boundary nodes");
  return state.sigma[x_node] - state.sigma[y_node];
}

std::vector<double> interior_temperature(const SystemState& state,
                                         const std::vector<Point>& points) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const Point& p : points) out.push_back(interpolate(state.T, p));
  return out;
}

// ---------------------------------------------------------------------------
// GaussianStream

double GaussianStream::next() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = static_cast<double>(splitmix64(state_++) >> 11) * 0x1p-53;
  } while (u1 <= 0.0);
  const double u2 = static_cast<double>(splitmix64(state_++) >> 11) * 0x1p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * M_PI * u2);
  have_spare_ = true;
  return r * std::cos(2.0 * M_PI * u2);
}

// ---------------------------------------------------------------------------
// Laboratory

Laboratory::Laboratory(const Grid& g, ModelBundle hidden, PicardOptions opts,
                       NoiseSpec noise, std::uint64_t seed)
    : grid_(&g),
      hidden_(std::move(hidden)),
      opts_(opts),
      noise_(noise),
      seed_(seed) {
  hidden_.check();
  require(noise_.voltage_sd >= 0.0 && noise_.flux_sd >= 0.0 &&
              noise_.temp_sd >= 0.0,
          "noise levels cannot be negative");
  // External iterates must not leak into cached experiments.
  opts_.initial_iterate = nullptr;
}

std::uint64_t Laboratory::experiment_hash(const Experiment& e) const {
  const Grid& g = *grid_;
  const int dim = g.dim();
  std::uint64_t h = fnv1a(&dim, sizeof dim);
  for (int ax = 0; ax < dim; ++ax) {
    const int n = g.nodes_along(ax);
    const double lo = g.lo(ax), hi = g.hi(ax);
    h = fnv1a(&n, sizeof n, h);
    h = fnv1a(&lo, sizeof lo, h);
    h = fnv1a(&hi, sizeof hi, h);
  }
  for (const auto& f : e.gamma)
    h = fnv1a(f.v.data(), f.v.size() * sizeof(double), h);
  h = fnv1a(e.tau.v.data(), e.tau.v.size() * sizeof(double), h);
  return h;
}

std::uint64_t Laboratory::noise_seed_for(const char* family,
                                         std::uint64_t data_hash) const {
  return splitmix64(seed_ ^ fnv1a(family, std::char_traits<char>::length(family)) ^
                    data_hash);
}

namespace {

bool same_experiment(const Experiment& a, const Experiment& b) {
  if (a.gamma.size() != b.gamma.size()) return false;
  for (std::size_t i = 0; i < a.gamma.size(); ++i)
    if (a.gamma[i].v != b.gamma[i].v) return false;
  return a.tau.v == b.tau.v;
}

bool constant_field(const std::vector<double>& v, double* value) {
  if (v.empty()) return false;
  for (double x : v)
    if (x != v.front()) return false;
  *value = v.front();
  return true;
}

} // namespace

std::shared_ptr<const SystemState> Laboratory::solve(const Experiment& e) const {
  require(static_cast<int>(e.gamma.size()) == hidden_.species,
          "experiment needs one concentration field per species");
  for (const auto& f : e.gamma)
    require(f.grid == grid_, "experiment boundary data on the wrong grid");
  require(e.tau.grid == grid_, "experiment boundary data on the wrong grid");

  const std::uint64_t key = experiment_hash(e);
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& entry : cache_)
      if (entry.key == key && same_experiment(entry.request, e))
        return entry.state;
  }

  // Constant concentrations on a source-free model have the closed-form
  // solution; everything else goes through the fixed-point iteration.
  std::shared_ptr<const SystemState> state;
  std::vector<double> constants(e.gamma.size());
  bool all_constant = hidden_.source_free();
  for (std::size_t i = 0; all_constant && i < e.gamma.size(); ++i)
    all_constant = constant_field(e.gamma[i].v, &constants[i]);
  if (all_constant) {
    state = std::make_shared<SystemState>(forward_constant_bc(
        hidden_, constants, e.tau, opts_.linear_tol, opts_));
  } else {
    state = std::make_shared<SystemState>(
        forward_solve(hidden_, e.gamma, e.tau, opts_));
  }

  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& entry : cache_)
    if (entry.key == key && same_experiment(entry.request, e))
      return entry.state;
  cache_.push_back(CacheEntry{key, e, state});
  if (cache_.size() > 128) cache_.pop_front();
  ++solve_count_;
  return state;
}

std::size_t Laboratory::solves() const {
  std::lock_guard<std::mutex> lock(mu_);
  return solve_count_;
}

Measured<CauchyRecord> Laboratory::cauchy(const Experiment& e,
                                          bool with_temp_flux) const {
  const auto state = solve(e);
  Measured<CauchyRecord> out;
  out.value = cauchy_record(*state, hidden_, with_temp_flux);
  out.noise_seed = noise_seed_for("cauchy", experiment_hash(e));
  if (noise_.flux_sd > 0.0) {
    GaussianStream gs(out.noise_seed);
    for (auto& f : out.value.flux)
      for (double& x : f.v) x += noise_.flux_sd * gs.next();
    if (out.value.temp_flux)
      for (double& x : out.value.temp_flux->v) x += noise_.flux_sd * gs.next();
  }
  return out;
}

Measured<double> Laboratory::voltage_between(const Experiment& e,
                                             std::size_t x_node,
                                             std::size_t y_node) const {
  const auto state = solve(e);
  Measured<double> out;
  std::uint64_t h = experiment_hash(e);
  h = fnv1a(&x_node, sizeof x_node, h);
  h = fnv1a(&y_node, sizeof y_node, h);
  out.noise_seed = noise_seed_for("voltage", h);
  out.value = voltage(*state, x_node, y_node);
  if (noise_.voltage_sd > 0.0) {
    GaussianStream gs(out.noise_seed);
    out.value += noise_.voltage_sd * gs.next();
  }
  return out;
}

Measured<BoundaryField> Laboratory::boundary_voltages(const Experiment& e,
                                                      std::size_t ref_node) const {
  const Grid& g = *grid_;
  require(ref_node < g.node_count() && g.is_boundary(ref_node),
          "boundary_voltages: reference must be a boundary node");
  const auto state = solve(e);
  Measured<BoundaryField> out;
  out.value = BoundaryField(g, 0.0);
  const double ref = state->sigma[ref_node];
  for (std::size_t b = 0; b < g.boundary_count(); ++b)
    out.value[b] = state->sigma[g.boundary_ids()[b]] - ref;
  std::uint64_t h = experiment_hash(e);
  h = fnv1a(&ref_node, sizeof ref_node, h);
  out.noise_seed = noise_seed_for("voltages", h);
  if (noise_.voltage_sd > 0.0) {
    GaussianStream gs(out.noise_seed);
    for (double& x : out.value.v) x += noise_.voltage_sd * gs.next();
  }
  return out;
}

Measured<std::vector<double>> Laboratory::probe_temperatures(
    const Experiment& e, const std::vector<Point>& points) const {
  const auto state = solve(e);
  Measured<std::vector<double>> out;
  out.value = interior_temperature(*state, points);
  std::uint64_t h = experiment_hash(e);
  if (!points.empty())
    h = fnv1a(points.data(), points.size() * sizeof(Point), h);
  out.noise_seed = noise_seed_for("temperature", h);
  if (noise_.temp_sd > 0.0) {
    GaussianStream gs(out.noise_seed);
    for (double& x : out.value) x += noise_.temp_sd * gs.next();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Probe boundary data

Experiment make_probe_data(const Grid& g, std::size_t node,
                           std::size_t ref_node,
                           const std::vector<double>& values,
                           const std::vector<double>& ref_values,
                           double radius) {
  require(node < g.node_count() && g.is_boundary(node),
          "make_probe_data: probe must be a boundary node");
  require(ref_node < g.node_count() && g.is_boundary(ref_node),
          "make_probe_data: reference must be a boundary node");
  require(values.size() == ref_values.size() && values.size() >= 2,
          "make_probe_data: need M+1 values at both nodes");
  require(radius > 0.0, "make_probe_data: radius must be positive");

  const Point pa = g.position(node);
  const Point pb = g.position(ref_node);
  auto tent = [radius](const Point& x, const Point& c) {
    double r2 = 0.0;
    for (std::size_t a = 0; a < 3; ++a) r2 += sqr(x[a] - c[a]);
    return std::max(0.0, 1.0 - std::sqrt(r2) / radius);
  };

  const bool same_node = node == ref_node;
  if (same_node)
    require(values == ref_values,
            "make_probe_data: conflicting values at a shared node");
  const double k = same_node ? 0.0 : tent(pb, pa);  // symmetric overlap

  const std::size_t m1 = values.size();
  Experiment e;
  e.gamma.reserve(m1 - 1);
  for (std::size_t comp = 0; comp < m1; ++comp) {
    // Background at the reference value; bumps lift the two probe nodes to
    // their prescribed values, correcting for tent overlap.
    const double base = ref_values[comp];
    const double da = values[comp] - base;
    const double db = 0.0;
    double alpha, beta;
    if (same_node) {
      alpha = da;
      beta = 0.0;
    } else {
      const double det = 1.0 - k * k;
      alpha = (da - k * db) / det;
      beta = (db - k * da) / det;
    }
    BoundaryField f(g, 0.0);
    for (std::size_t b = 0; b < g.boundary_count(); ++b) {
      const Point x = g.position(g.boundary_ids()[b]);
      f[b] = base + alpha * tent(x, pa) + beta * tent(x, pb);
    }
    if (comp + 1 < m1)
      e.gamma.push_back(std::move(f));
    else
      e.tau = std::move(f);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Linearised boundary map

std::vector<BoundaryField> linearised_dn(const ModelBundle& bundle,
                                         const std::vector<double>& mu,
                                         const BoundaryField& eta0,
                                         const std::vector<BoundaryField>& f,
                                         double tol, LinearisedBackground* extra) {
  bundle.check();
  require(bundle.source_free(), "linearised_dn needs a source-free bundle");
  require(static_cast<int>(mu.size()) == bundle.species,
          "linearised_dn: one background constant per species");
  require(static_cast<int>(f.size()) == bundle.species,
          "linearised_dn: one data field per species");
  const Grid& g = *eta0.grid;

  // Background: constant concentrations mu and the matching substituted
  // potential; the temperature follows by nodewise inversion.
  double qdotmu = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    qdotmu += bundle.charge[i] * mu[i];
  const ScalarField eps = bundle.permittivity.sample(g);
  ScalarField sigma_bg =
      l_eps_inverse(eps, ScalarField(g, qdotmu), eta0, tol);

  const std::size_t M = mu.size();
  std::vector<BoundaryField> flux(M);
  std::vector<ScalarField> solutions(M);
  for (std::size_t i = 0; i < M; ++i) {
    LinearEllipticProblem p;
    p.grid = &g;
    p.a = ScalarField(g);
    for (std::size_t id = 0; id < g.node_count(); ++id) {
      const Point x = g.position(id);
      const double t =
          invert_temperature(bundle.potential, mu, sigma_bg[id], x);
      p.a[id] = bundle.diffusion[i].value(mu, t, x);
    }
    p.f = ScalarField(g, 0.0);
    p.g = f[i];
    p.lambda = bundle.lambda;
    auto [u, rep] = solve_dirichlet(p, tol);
    if (!rep.converged)
      throw NumericalError("linearised_dn: solve stalled at residual " +
                           format_double(rep.final_residual));
    flux[i] = boundary_flux(p.a, u);
    solutions[i] = std::move(u);
  }

  if (extra != nullptr) {
    extra->fields.clear();
    extra->fields.reserve(M + 1);
    for (double m : mu) extra->fields.emplace_back(g, m);
    extra->fields.push_back(std::move(sigma_bg));
    extra->solutions = std::move(solutions);
  }
  return flux;
}

std::vector<double> default_rate_t_list() {
  std::vector<double> t;
  for (int k = 1; k <= 8; ++k) t.push_back(std::ldexp(1.0, -k));
  return t;
}

RateReport linearisation_rate(const ModelBundle& bundle, const Grid& g,
                              const std::vector<double>& mu,
                              const BoundaryField& eta0,
                              const std::vector<BoundaryField>& f,
                              const std::vector<double>& t_list,
                              const PicardOptions& opts) {
  bundle.check();
  require(bundle.source_free(), "linearisation_rate needs a source-free bundle");
  require(!t_list.empty(), "linearisation_rate: empty t list");
  for (std::size_t k = 0; k < t_list.size(); ++k) {
    require(t_list[k] > 0.0, "linearisation_rate: t values must be positive");
    if (k > 0)
      require(t_list[k] < t_list[k - 1],
              "linearisation_rate: t values must be strictly decreasing");
  }

  const std::size_t M = mu.size();
  LinearisedBackground bg;
  const std::vector<BoundaryField> lin =
      linearised_dn(bundle, mu, eta0, f, opts.linear_tol, &bg);

  // Charge response of the linearised concentration perturbation; used only
  // to warm start the potential coordinate.
  const ScalarField eps = bundle.permittivity.sample(g);
  ScalarField sigma_lin(g, 0.0);
  bool any_charge = false;
  for (double q : bundle.charge)
    if (q != 0.0) any_charge = true;
  if (any_charge) {
    ScalarField qsum(g, 0.0);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t id = 0; id < g.node_count(); ++id)
        qsum[id] += bundle.charge[i] * bg.solutions[i][id];
    sigma_lin = l_eps_inverse(eps, qsum, BoundaryField(g, 0.0), opts.linear_tol);
  }

  RateReport rep;
  for (double t : t_list) {
    // Dirichlet data mu + t f per species; temperature data keeps the
    // substituted potential trace at eta0.
    std::vector<BoundaryField> gamma_t;
    gamma_t.reserve(M);
    for (std::size_t i = 0; i < M; ++i) {
      BoundaryField field = f[i];
      for (std::size_t b = 0; b < field.v.size(); ++b)
        field[b] = mu[i] + t * f[i][b];
      gamma_t.push_back(std::move(field));
    }
    BoundaryField tau_t(g, 0.0);
    std::vector<double> p(M);
    for (std::size_t b = 0; b < g.boundary_count(); ++b) {
      const std::size_t id = g.boundary_ids()[b];
      for (std::size_t i = 0; i < M; ++i) p[i] = gamma_t[i][b];
      tau_t[b] = invert_temperature(bundle.potential, p, eta0[b],
                                    g.position(id), opts.inversion_tol);
    }

    // Warm start from the first-order prediction around the background.
    std::vector<ScalarField> start(M + 1, ScalarField(g, 0.0));
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t id = 0; id < g.node_count(); ++id)
        start[i][id] = mu[i] + t * bg.solutions[i][id];
    for (std::size_t id = 0; id < g.node_count(); ++id)
      start[M][id] = bg.fields[M][id] + t * sigma_lin[id];

    PicardOptions popts = opts;
    popts.initial_iterate = &start;

    rep.t.push_back(t);
    try {
      const SystemState state = forward_solve(bundle, gamma_t, tau_t, popts);
      const CauchyRecord rec = cauchy_record(state, bundle, false);
      double err2 = 0.0;
      for (std::size_t i = 0; i < M; ++i) {
        BoundaryField diff = rec.flux[i];
        for (std::size_t b = 0; b < diff.v.size(); ++b)
          diff[b] = rec.flux[i][b] / t - lin[i][b];
        err2 += sqr(boundary_norm(diff));
      }
      rep.error.push_back(std::sqrt(err2));
      rep.converged.push_back(true);
    } catch (const NumericalError&) {
      rep.error.push_back(std::numeric_limits<double>::quiet_NaN());
      rep.converged.push_back(false);
    }
  }

  // Log-log fit over the last (smallest-t) converged entries with a
  // positive error; fewer than two usable points leave the slope at zero.
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < rep.t.size(); ++k) {
    if (!rep.converged[k] || !(rep.error[k] > 0.0)) continue;
    lx.push_back(std::log(rep.t[k]));
    ly.push_back(std::log(rep.error[k]));
  }
  const std::size_t keep = 4;
  if (lx.size() > keep) {
    lx.erase(lx.begin(), lx.end() - static_cast<std::ptrdiff_t>(keep));
    ly.erase(ly.begin(), ly.end() - static_cast<std::ptrdiff_t>(keep));
  }
  rep.fit_points = static_cast<int>(lx.size());
  rep.slope = lx.size() >= 2 ? fit_slope(lx, ly) : 0.0;
  return rep;
}

} // namespace elcell
