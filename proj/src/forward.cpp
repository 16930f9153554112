#include "elcell/forward.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "elcell/util.hpp"

namespace elcell {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void check_boundary_data(const ModelBundle& bundle, const Grid& g,
                         const std::vector<BoundaryField>& gamma,
                         const BoundaryField& tau) {
  require(static_cast<int>(gamma.size()) == bundle.species,
          "boundary data needs one concentration field per species");
  for (const auto& f : gamma)
    require(f.grid == &g && f.v.size() == g.boundary_count(),
            "concentration boundary field on the wrong grid");
  require(tau.grid == &g && tau.v.size() == g.boundary_count(),
          "temperature boundary field on the wrong grid");
}

// Harmonic extension of Dirichlet data: coefficient-one source-free solve.
// Exact (zero iterations) for constant data thanks to the boundary-mean seed.
ScalarField harmonic_extension(const Grid& g, const BoundaryField& data,
                               double tol) {
  LinearEllipticProblem p;
  p.grid = &g;
  p.a = ScalarField(g, 1.0);
  p.f = ScalarField(g, 0.0);
  p.g = data;
  p.lambda = 1.0;
  return solve_dirichlet(p, tol).first;
}

// Stacked relative change between two coordinate lists:
// |w - v|_2 / max(|w|_2, tiny) over all fields at once.
double relative_change(const std::vector<ScalarField>& w,
                       const std::vector<ScalarField>& v) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t k = 0; k < w[i].v.size(); ++k) {
      num += sqr(w[i].v[k] - v[i].v[k]);
      den += sqr(w[i].v[k]);
    }
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// Temperature of the frozen iterate, one inversion per node. Boundary nodes
// come out as tau up to the inversion tolerance because the iterate carries
// gamma and eta0 there.
std::vector<double> frozen_temperature(const ModelBundle& bundle,
                                       const std::vector<ScalarField>& v,
                                       const PicardOptions& opts) {
  const Grid& g = *v.front().grid;
  const std::size_t M = static_cast<std::size_t>(bundle.species);
  std::vector<double> temp(g.node_count(), 0.0);
  parallel_for(g.node_count(), opts.threads, [&](std::size_t id) {
    std::vector<double> p(M);
    for (std::size_t i = 0; i < M; ++i) p[i] = v[i][id];
    temp[id] = invert_temperature(bundle.potential, p, v[M][id], g.position(id),
                                  opts.inversion_tol);
  });
  return temp;
}

// Residuals of every coordinate's linear problem with coefficients frozen at
// the given iterate; returns the maximum.
double frozen_pde_residual(const ModelBundle& bundle,
                           const std::vector<ScalarField>& v,
                           const std::vector<BoundaryField>& gamma,
                           const BoundaryField& eta0,
                           const std::vector<double>& temp) {
  const Grid& g = *v.front().grid;
  const std::size_t M = static_cast<std::size_t>(bundle.species);
  double worst = 0.0;

  std::vector<double> p(M);
  LinearEllipticProblem prob;
  prob.grid = &g;
  prob.lambda = bundle.lambda;

  for (std::size_t i = 0; i < M; ++i) {
    prob.a = ScalarField(g);
    prob.f = ScalarField(g);
    for (std::size_t id = 0; id < g.node_count(); ++id) {
      for (std::size_t j = 0; j < M; ++j) p[j] = v[j][id];
      const Point x = g.position(id);
      prob.a[id] = bundle.diffusion[i].value(p, temp[id], x);
      prob.f[id] =
          bundle.source[i].is_zero() ? 0.0 : bundle.source[i].value(p, temp[id], x);
    }
    prob.g = gamma[i];
    worst = std::max(worst, stencil_residual(prob, v[i]));
  }

  prob.a = bundle.permittivity.sample(g);
  prob.f = ScalarField(g);
  for (std::size_t id = 0; id < g.node_count(); ++id) {
    double qc = 0.0;
    for (std::size_t j = 0; j < M; ++j) qc += bundle.charge[j] * v[j][id];
    prob.f[id] = -qc;
  }
  prob.g = eta0;
  worst = std::max(worst, stencil_residual(prob, v[M]));
  return worst;
}

SystemState assemble_state(const ModelBundle& bundle,
                           std::vector<ScalarField> v,
                           const std::vector<BoundaryField>& gamma,
                           const BoundaryField& tau, const PicardOptions& opts,
                           PicardReport report) {
  const Grid& g = *v.front().grid;
  const std::size_t M = static_cast<std::size_t>(bundle.species);

  SystemState st;
  st.grid = &g;
  st.sigma = std::move(v[M]);
  st.c.reserve(M);
  for (std::size_t i = 0; i < M; ++i) st.c.push_back(std::move(v[i]));
  st.gamma = gamma;
  st.tau = tau;

  // Recover temperature nodewise; boundary nodes are pinned to tau exactly.
  st.T = ScalarField(g, 0.0);
  parallel_for(g.node_count(), opts.threads, [&](std::size_t id) {
    if (g.is_boundary(id)) {
      st.T[id] = tau.v[g.boundary_ordinal(id)];
      return;
    }
    std::vector<double> p(M);
    for (std::size_t i = 0; i < M; ++i) p[i] = st.c[i][id];
    st.T[id] = invert_temperature(bundle.potential, p, st.sigma[id],
                                  g.position(id), opts.inversion_tol);
  });

  st.report = std::move(report);
  return st;
}

} // namespace

BoundaryField potential_boundary_data(const ModelBundle& bundle,
                                      const std::vector<BoundaryField>& gamma,
                                      const BoundaryField& tau) {
  const Grid& g = *tau.grid;
  check_boundary_data(bundle, g, gamma, tau);
  const std::size_t M = static_cast<std::size_t>(bundle.species);

  BoundaryField eta0(g, 0.0);
  std::vector<double> p(M);
  for (std::size_t b = 0; b < g.boundary_count(); ++b) {
    const std::size_t id = g.boundary_ids()[b];
    for (std::size_t i = 0; i < M; ++i) p[i] = gamma[i][b];
    eta0[b] = bundle.potential.value(p, tau[b], g.position(id));
  }
  return eta0;
}

std::vector<ScalarField> picard_step(const ModelBundle& bundle,
                                     const std::vector<ScalarField>& v,
                                     const std::vector<BoundaryField>& gamma,
                                     const BoundaryField& tau,
                                     const PicardOptions& opts) {
  bundle.check();
  require(static_cast<int>(v.size()) == bundle.species + 1,
          "picard_step needs M+1 iterate fields");
  const Grid& g = *v.front().grid;
  for (const auto& f : v) {
    require(f.grid == &g, "iterate fields on mixed grids");
    for (double x : f.v)
      require(std::isfinite(x), "iterate field contains a non-finite value");
  }
  check_boundary_data(bundle, g, gamma, tau);

  const std::size_t M = static_cast<std::size_t>(bundle.species);
  const BoundaryField eta0 = potential_boundary_data(bundle, gamma, tau);
  const std::vector<double> temp = frozen_temperature(bundle, v, opts);

  std::vector<ScalarField> w(M + 1);
  // The M+1 frozen problems are independent; solve them concurrently, each
  // warm started from its own coordinate of v.
  parallel_for(M + 1, opts.threads, [&](std::size_t coord) {
    LinearEllipticProblem prob;
    prob.grid = &g;
    prob.lambda = bundle.lambda;
    prob.a = ScalarField(g);
    prob.f = ScalarField(g);
    std::vector<double> p(M);

    if (coord < M) {
      const bool zero_source = bundle.source[coord].is_zero();
      for (std::size_t id = 0; id < g.node_count(); ++id) {
        for (std::size_t j = 0; j < M; ++j) p[j] = v[j][id];
        const Point x = g.position(id);
        prob.a[id] = bundle.diffusion[coord].value(p, temp[id], x);
        if (!zero_source)
          prob.f[id] = bundle.source[coord].value(p, temp[id], x);
      }
      prob.g = gamma[coord];
    } else {
      prob.a = bundle.permittivity.sample(g);
      for (std::size_t id = 0; id < g.node_count(); ++id) {
        double qc = 0.0;
        for (std::size_t j = 0; j < M; ++j) qc += bundle.charge[j] * v[j][id];
        prob.f[id] = -qc;
      }
      prob.g = eta0;
    }

    SolveOptions so;
    so.tol = opts.linear_tol;
    so.initial_guess = &v[coord];
    auto [field, rep] = solve_dirichlet(prob, so);
    if (!rep.converged)
      throw NumericalError("picard_step: linear solve stalled at residual " +
                           format_double(rep.final_residual));
    w[coord] = std::move(field);
  });

  return w;
}

SystemState forward_solve(const ModelBundle& bundle,
                          const std::vector<BoundaryField>& gamma,
                          const BoundaryField& tau, const PicardOptions& opts) {
  bundle.check();
  const Grid& g = *tau.grid;
  check_boundary_data(bundle, g, gamma, tau);
  require(opts.fixed_point_tol > 0.0 && opts.linear_tol > 0.0 &&
              opts.inversion_tol > 0.0,
          "picard tolerances must be positive");
  require(opts.damping > 0.0 && opts.damping <= 1.0,
          "picard damping must lie in (0, 1]");
  require(opts.max_outer_iterations >= 1, "need at least one outer iteration");

  const std::size_t M = static_cast<std::size_t>(bundle.species);
  const BoundaryField eta0 = potential_boundary_data(bundle, gamma, tau);
  constexpr double kDampingFloor = 1.0 / 16.0;

  // Initial iterate: harmonic extension of the boundary data per coordinate,
  // unless the caller supplied one.
  std::vector<ScalarField> v(M + 1);
  if (opts.initial_iterate != nullptr) {
    require(opts.initial_iterate->size() == M + 1,
            "initial iterate needs M+1 fields");
    for (const auto& f : *opts.initial_iterate)
      require(f.grid == &g, "initial iterate on the wrong grid");
    v = *opts.initial_iterate;
  } else {
    for (std::size_t i = 0; i < M; ++i)
      v[i] = harmonic_extension(g, gamma[i], opts.linear_tol);
    v[M] = harmonic_extension(g, eta0, opts.linear_tol);
  }

  std::vector<ScalarField> w = picard_step(bundle, v, gamma, tau, opts);
  double res = relative_change(w, v);

  PicardReport report;
  report.final_damping = opts.damping;
  report.history.push_back(res);

  double d = opts.damping;
  auto blend = [&](const std::vector<ScalarField>& base,
                   const std::vector<ScalarField>& target, double frac) {
    std::vector<ScalarField> out = base;
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t k = 0; k < out[i].v.size(); ++k)
        out[i].v[k] += frac * (target[i].v[k] - base[i].v[k]);
    return out;
  };

  while (report.iterations < opts.max_outer_iterations) {
    ++report.iterations;

    if (res <= opts.fixed_point_tol) {
      // The undamped step from v lands within tolerance; accept it as final.
      v = std::move(w);
      report.final_change = res;
      report.final_damping = d;
      const std::vector<double> temp = frozen_temperature(bundle, v, opts);
      report.pde_residual = frozen_pde_residual(bundle, v, gamma, eta0, temp);
      report.converged =
          report.pde_residual <=
          10.0 * std::max(opts.fixed_point_tol, opts.linear_tol);
      if (report.converged)
        return assemble_state(bundle, std::move(v), gamma, tau, opts,
                              std::move(report));
      std::ostringstream msg;
      msg << "forward_solve: fixed point reached (change " << res
          << ") but the frozen-coefficient residual " << report.pde_residual
          << " stays above tolerance";
      throw NumericalError(msg.str());
    }

    // Damped candidate: u = v + d (w - v). Accept only if its own
    // fixed-point residual does not grow; otherwise halve the step.
    bool accepted = false;
    while (true) {
      std::vector<ScalarField> u = d >= 1.0 ? w : blend(v, w, d);
      std::vector<ScalarField> wu = picard_step(bundle, u, gamma, tau, opts);
      const double res_u = relative_change(wu, u);
      if (res_u <= res * (1.0 + 1e-12)) {
        v = std::move(u);
        w = std::move(wu);
        res = res_u;
        report.history.push_back(res);
        accepted = true;
        break;
      }
      if (d <= kDampingFloor * (1.0 + 1e-12)) break;
      d = std::max(0.5 * d, kDampingFloor);
    }

    if (!accepted) {
      std::ostringstream msg;
      msg << "forward_solve: residual stagnated at " << res
          << " with damping at the floor after " << report.iterations
          << " iterations; history tail:";
      const std::size_t tail =
          report.history.size() > 8 ? report.history.size() - 8 : 0;
      for (std::size_t k = tail; k < report.history.size(); ++k)
        msg << " " << report.history[k];
      throw NumericalError(msg.str());
    }

    // Ease the damping back toward the configured cap once steps succeed.
    d = std::min(2.0 * d, opts.damping);
  }

  std::ostringstream msg;
  msg << "forward_solve: no fixed point within " << opts.max_outer_iterations
      << " iterations (last change " << res << "); history tail:";
  const std::size_t tail =
      report.history.size() > 8 ? report.history.size() - 8 : 0;
  for (std::size_t k = tail; k < report.history.size(); ++k)
    msg << " " << report.history[k];
  throw NumericalError(msg.str());
}

SystemState forward_constant_bc(const ModelBundle& bundle,
                                const std::vector<double>& gamma,
                                const BoundaryField& tau, double tol,
                                const PicardOptions& opts) {
  bundle.check();
  require(bundle.source_free(),
          "forward_constant_bc needs a source-free bundle");
  require(static_cast<int>(gamma.size()) == bundle.species,
          "forward_constant_bc needs one constant per species");
  require(tol > 0.0, "forward_constant_bc tolerance must be positive");
  const Grid& g = *tau.grid;

  std::vector<BoundaryField> gamma_b;
  gamma_b.reserve(gamma.size());
  for (double c : gamma) gamma_b.emplace_back(g, c);
  const BoundaryField eta0 = potential_boundary_data(bundle, gamma_b, tau);

  double qdotg = 0.0;
  for (std::size_t i = 0; i < gamma.size(); ++i)
    qdotg += bundle.charge[i] * gamma[i];

  // sigma solves div(eps grad sigma) = q . gamma with data eta0. Seeding
  // from the harmonic extension of eta0 makes this the same conjugate
  // gradient run the Picard path performs, so the two agree to the bit.
  const ScalarField eps = bundle.permittivity.sample(g);
  const ScalarField seed = harmonic_extension(g, eta0, tol);
  SolveReport lin;
  ScalarField sigma =
      l_eps_inverse(eps, ScalarField(g, qdotg), eta0, tol, &lin, &seed);
  if (!lin.converged)
    throw NumericalError("forward_constant_bc: potential solve stalled at " +
                         format_double(lin.final_residual));

  std::vector<ScalarField> v;
  v.reserve(gamma.size() + 1);
  for (double c : gamma) v.emplace_back(g, c);
  v.push_back(std::move(sigma));

  PicardReport report;
  report.converged = true;
  report.iterations = lin.iterations;
  report.final_change = 0.0;
  report.pde_residual = lin.final_residual;
  report.history = {lin.final_residual};

  PicardOptions aopts = opts;
  aopts.linear_tol = tol;
  return assemble_state(bundle, std::move(v), gamma_b, tau, aopts,
                        std::move(report));
}

std::pair<EigenDemoState, EigenDemoState> nonuniqueness_with_sources(
    const Grid& g) {
  require(g.dim() == 2, "eigenfunction demo needs a 2-d grid");
  for (int ax = 0; ax < 2; ++ax)
    require(std::abs(g.lo(ax)) < 1e-14 && std::abs(g.hi(ax) - 1.0) < 1e-14,
            "eigenfunction demo needs the unit square");

  const double lam = 2.0 * M_PI * M_PI;
  // Smooth cutoff that equals 1 on [-1/4, 5/4], the (padded) range of the
  // eigenfunction, and falls to 0 outside [-3/4, 7/4]. Keeps the source
  // bounded without touching it on the solution range.
  auto rho = [](double s) {
    const double dist = std::max({-0.25 - s, s - 1.25, 0.0});
    if (dist <= 0.0) return 1.0;
    if (dist >= 0.5) return 0.0;
    const double t = dist / 0.5;
    const double e1 = std::exp(-1.0 / (1.0 - t));
    const double e0 = std::exp(-1.0 / t);
    return e1 / (e0 + e1);
  };

  auto residual_of = [&](const ScalarField& u) {
    LinearEllipticProblem p;
    p.grid = &g;
    p.a = ScalarField(g, 1.0);
    p.f = ScalarField(g);
    for (std::size_t id = 0; id < g.node_count(); ++id)
      p.f[id] = lam * u[id] * rho(u[id]);
    p.g = BoundaryField(g, 0.0);
    p.lambda = 1.0;
    return volume_norm(residual_field(p, u));
  };

  EigenDemoState zero;
  zero.field = ScalarField(g, 0.0);
  zero.residual = residual_of(zero.field);

  EigenDemoState eigen;
  eigen.field = sample_scalar(g, [](const Point& x) {
    return std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]);
  });
  eigen.residual = residual_of(eigen.field);

  return {std::move(zero), std::move(eigen)};
}

} // namespace elcell
