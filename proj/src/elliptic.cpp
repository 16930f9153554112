#include "elcell/elliptic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "elcell/util.hpp"

namespace elcell {

namespace {

// Shared assembly context: interior numbering, strides, face coefficients.
struct Stencil {
  const Grid* grid;
  const ScalarField* a;
  std::vector<std::size_t> interior_of_node;  // node id -> interior ordinal
  std::array<std::size_t, 3> stride{};
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  explicit Stencil(const LinearEllipticProblem& p) : grid(p.grid), a(&p.a) {
    const Grid& g = *grid;
    interior_of_node.assign(g.node_count(), kNone);
    for (std::size_t i = 0; i < g.interior_count(); ++i)
      interior_of_node[g.interior_ids()[i]] = i;
    stride = {1, static_cast<std::size_t>(g.nodes_along(0)),
              static_cast<std::size_t>(g.nodes_along(0)) *
                  static_cast<std::size_t>(g.nodes_along(1))};
  }

  // Harmonic face average; coefficients are validated positive up front.
  double face(std::size_t id, std::size_t nb) const {
    const double u = (*a)[id];
    const double v = (*a)[nb];
    return 2.0 * u * v / (u + v);
  }

  // y = A x for interior vectors; boundary neighbours contribute nothing
  // here (their effect lives in the right-hand side).
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    const Grid& g = *grid;
    const std::size_t ni = g.interior_count();
    for (std::size_t r = 0; r < ni; ++r) {
      const std::size_t id = g.interior_ids()[r];
      double acc = 0.0;
      for (int ax = 0; ax < g.dim(); ++ax) {
        const double inv_h2 = 1.0 / (g.spacing(ax) * g.spacing(ax));
        for (int side = 0; side < 2; ++side) {
          const std::size_t nb =
              side == 0 ? id - stride[ax] : id + stride[ax];
          const double c = face(id, nb) * inv_h2;
          const std::size_t nb_r = interior_of_node[nb];
          acc += c * x[r];
          if (nb_r != kNone) acc -= c * x[nb_r];
        }
      }
      y[r] = acc;
    }
  }

  std::vector<double> diagonal() const {
    const Grid& g = *grid;
    std::vector<double> d(g.interior_count(), 0.0);
    for (std::size_t r = 0; r < g.interior_count(); ++r) {
      const std::size_t id = g.interior_ids()[r];
      for (int ax = 0; ax < g.dim(); ++ax) {
        const double inv_h2 = 1.0 / (g.spacing(ax) * g.spacing(ax));
        d[r] += (face(id, id - stride[ax]) + face(id, id + stride[ax])) * inv_h2;
      }
    }
    return d;
  }

  // f plus the boundary lifting of the Dirichlet data.
  std::vector<double> rhs(const ScalarField& f, const BoundaryField& g_data) const {
    const Grid& g = *grid;
    std::vector<double> b(g.interior_count(), 0.0);
    for (std::size_t r = 0; r < g.interior_count(); ++r) {
      const std::size_t id = g.interior_ids()[r];
      double acc = f[id];
      for (int ax = 0; ax < g.dim(); ++ax) {
        const double inv_h2 = 1.0 / (g.spacing(ax) * g.spacing(ax));
        for (int side = 0; side < 2; ++side) {
          const std::size_t nb =
              side == 0 ? id - stride[ax] : id + stride[ax];
          if (interior_of_node[nb] == kNone)
            acc += face(id, nb) * inv_h2 * g_data.at_node(nb);
        }
      }
      b[r] = acc;
    }
    return b;
  }
};

void check_problem(const LinearEllipticProblem& p) {
  if (p.grid == nullptr) throw std::invalid_argument("elliptic: missing grid");
  const std::size_t n = p.grid->node_count();
  if (p.a.size() != n || p.f.size() != n ||
      p.g.size() != p.grid->boundary_count())
    throw std::invalid_argument("elliptic: field sizes do not match the grid");
  if (!(p.lambda > 0.0))
    throw std::invalid_argument("elliptic: lambda must be positive");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p.a[i]) || !std::isfinite(p.f[i]))
      throw std::invalid_argument("elliptic: non-finite coefficient or rhs");
    if (p.a[i] < p.lambda)
      throw std::invalid_argument(
          "elliptic: coefficient drops below the declared lambda at node " +
          std::to_string(i));
  }
}

ScalarField assemble_solution(const LinearEllipticProblem& p,
                              const std::vector<double>& x) {
  const Grid& g = *p.grid;
  ScalarField u(g, 0.0);
  for (std::size_t r = 0; r < g.interior_count(); ++r)
    u[g.interior_ids()[r]] = x[r];
  for (std::size_t b = 0; b < g.boundary_count(); ++b)
    u[g.boundary_ids()[b]] = p.g[b];
  return u;
}

} // namespace

std::pair<ScalarField, SolveReport> solve_dirichlet(
    const LinearEllipticProblem& p, const SolveOptions& opt) {
  check_problem(p);
  if (!(opt.tol > 0.0))
    throw std::invalid_argument("solve_dirichlet: tolerance must be positive");

  const Grid& g = *p.grid;
  const std::size_t ni = g.interior_count();
  const Stencil st(p);
  const std::vector<double> b = st.rhs(p.f, p.g);
  const std::vector<double> diag = st.diagonal();

  const double b_norm = l2_norm(b);
  const double denom = b_norm > 0.0 ? b_norm : 1.0;
  const long max_iter = opt.max_iterations > 0
                            ? opt.max_iterations
                            : 20 * static_cast<long>(g.node_count());

  // Start from the supplied guess, else from the mean of the boundary data;
  // the latter makes constant solutions exact with zero iterations.
  std::vector<double> x(ni, 0.0);
  if (opt.initial_guess != nullptr) {
    if (opt.initial_guess->size() != g.node_count())
      throw std::invalid_argument("solve_dirichlet: bad initial guess size");
    for (std::size_t r = 0; r < ni; ++r)
      x[r] = (*opt.initial_guess)[g.interior_ids()[r]];
  } else if (g.boundary_count() > 0) {
    double mean = 0.0;
    for (std::size_t i = 0; i < p.g.size(); ++i) mean += p.g[i];
    mean /= static_cast<double>(p.g.size());
    x.assign(ni, mean);
  }

  SolveReport report;
  report.tolerance = opt.tol;

  std::vector<double> r(ni), z(ni), q(ni), d(ni);
  st.apply(x, q);
  for (std::size_t i = 0; i < ni; ++i) r[i] = b[i] - q[i];

  long iter = 0;
  double r_norm = l2_norm(r);
  // Outer loop guards against recurrence drift: after the recurrence says
  // converged, the true residual is recomputed and CG restarts if it is
  // still above target.
  while (r_norm > opt.tol * denom && iter < max_iter) {
    for (std::size_t i = 0; i < ni; ++i) z[i] = r[i] / diag[i];
    d = z;
    double rz = 0.0;
    for (std::size_t i = 0; i < ni; ++i) rz += r[i] * z[i];

    while (iter < max_iter) {
      st.apply(d, q);
      double dq = 0.0;
      for (std::size_t i = 0; i < ni; ++i) dq += d[i] * q[i];
      if (!(dq > 0.0))
        break;  // numerically indefinite direction; restart or give up
      const double alpha = rz / dq;
      for (std::size_t i = 0; i < ni; ++i) {
        x[i] += alpha * d[i];
        r[i] -= alpha * q[i];
      }
      ++iter;
      r_norm = l2_norm(r);
      if (r_norm <= 0.5 * opt.tol * denom) break;
      for (std::size_t i = 0; i < ni; ++i) z[i] = r[i] / diag[i];
      double rz_next = 0.0;
      for (std::size_t i = 0; i < ni; ++i) rz_next += r[i] * z[i];
      const double beta = rz_next / rz;
      rz = rz_next;
      for (std::size_t i = 0; i < ni; ++i) d[i] = z[i] + beta * d[i];
    }

    st.apply(x, q);
    for (std::size_t i = 0; i < ni; ++i) r[i] = b[i] - q[i];
    r_norm = l2_norm(r);
  }

  report.iterations = static_cast<int>(iter);
  report.final_residual = r_norm / denom;
  report.converged = report.final_residual <= opt.tol;
  return {assemble_solution(p, x), report};
}

std::pair<ScalarField, SolveReport> solve_dirichlet(
    const LinearEllipticProblem& p, double tol) {
  SolveOptions opt;
  opt.tol = tol;
  return solve_dirichlet(p, opt);
}

ScalarField dense_dirichlet(const LinearEllipticProblem& p) {
  check_problem(p);
  const Grid& g = *p.grid;
  if (g.node_count() > 2000)
    throw std::invalid_argument(
        "dense_dirichlet: oracle limited to 2000 nodes, got " +
        std::to_string(g.node_count()));

  const Stencil st(p);
  const std::size_t ni = g.interior_count();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(ni, ni);
  for (std::size_t r = 0; r < ni; ++r) {
    const std::size_t id = g.interior_ids()[r];
    for (int ax = 0; ax < g.dim(); ++ax) {
      const double inv_h2 = 1.0 / (g.spacing(ax) * g.spacing(ax));
      for (int side = 0; side < 2; ++side) {
        const std::size_t nb = side == 0 ? id - st.stride[ax] : id + st.stride[ax];
        const double c = st.face(id, nb) * inv_h2;
        A(r, r) += c;
        const std::size_t nb_r = st.interior_of_node[nb];
        if (nb_r != Stencil::kNone) A(r, nb_r) -= c;
      }
    }
  }
  const std::vector<double> b = st.rhs(p.f, p.g);
  Eigen::VectorXd rhs(ni);
  for (std::size_t i = 0; i < ni; ++i) rhs[static_cast<Eigen::Index>(i)] = b[i];
  Eigen::VectorXd sol = A.ldlt().solve(rhs);
  std::vector<double> x(ni);
  for (std::size_t i = 0; i < ni; ++i) x[i] = sol[static_cast<Eigen::Index>(i)];
  return assemble_solution(p, x);
}

ScalarField l_eps_inverse(const ScalarField& eps, const ScalarField& v,
                          const BoundaryField& eta0, double tol,
                          SolveReport* report, const ScalarField* initial_guess) {
  LinearEllipticProblem p;
  p.grid = eps.grid;
  p.a = eps;
  p.f = v;
  // div(eps grad u) = v  reads  -div(eps grad u) = -v.
  for (auto& val : p.f.v) val = -val;
  p.g = eta0;
  double min_eps = eps.v.empty() ? 0.0 : eps[0];
  for (double e : eps.v) min_eps = std::min(min_eps, e);
  p.lambda = min_eps;
  SolveOptions opt;
  opt.tol = tol;
  opt.initial_guess = initial_guess;
  auto [u, rep] = solve_dirichlet(p, opt);
  if (report != nullptr) *report = rep;
  return u;
}

BoundaryField boundary_flux(const ScalarField& a, const ScalarField& u) {
  const Grid& g = *u.grid;
  VectorField grad = gradient(u);
  for (int ax = 0; ax < g.dim(); ++ax)
    for (std::size_t id = 0; id < g.node_count(); ++id)
      grad.comp[ax][id] *= a[id];
  return normal_trace(grad);
}

BoundaryField dn_map(const ScalarField& a, const BoundaryField& f_bdry,
                     double tol, SolveReport* report) {
  LinearEllipticProblem p;
  p.grid = a.grid;
  p.a = a;
  p.f = ScalarField(*a.grid, 0.0);
  p.g = f_bdry;
  double min_a = a.v.empty() ? 0.0 : a[0];
  for (double e : a.v) min_a = std::min(min_a, e);
  p.lambda = min_a;
  auto [u, rep] = solve_dirichlet(p, tol);
  if (report != nullptr) *report = rep;
  return boundary_flux(a, u);
}

double stencil_residual(const LinearEllipticProblem& p, const ScalarField& u) {
  check_problem(p);
  const Grid& g = *p.grid;
  const Stencil st(p);
  const std::vector<double> b = st.rhs(p.f, p.g);
  std::vector<double> x(g.interior_count());
  for (std::size_t r = 0; r < g.interior_count(); ++r)
    x[r] = u[g.interior_ids()[r]];
  std::vector<double> q(g.interior_count());
  st.apply(x, q);

  // b already carries the Dirichlet lifting, so b - A x is the residual of
  // the pinned problem with boundary values forced to p.g.
  double s = 0.0;
  for (std::size_t r = 0; r < g.interior_count(); ++r) s += sqr(b[r] - q[r]);
  const double b_norm = l2_norm(b);
  return std::sqrt(s) / (b_norm > 0.0 ? b_norm : 1.0);
}

ScalarField residual_field(const LinearEllipticProblem& p, const ScalarField& u) {
  check_problem(p);
  const Grid& g = *p.grid;
  const Stencil st(p);
  const std::vector<double> b = st.rhs(p.f, p.g);
  std::vector<double> x(g.interior_count());
  for (std::size_t r = 0; r < g.interior_count(); ++r)
    x[r] = u[g.interior_ids()[r]];
  std::vector<double> q(g.interior_count());
  st.apply(x, q);

  ScalarField out(g, 0.0);
  for (std::size_t r = 0; r < g.interior_count(); ++r)
    out[g.interior_ids()[r]] = b[r] - q[r];
  return out;
}

} // namespace elcell
