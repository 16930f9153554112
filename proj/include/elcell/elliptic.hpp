#pragma once

#include <utility>

#include "elcell/grid.hpp"

namespace elcell {

/// Dirichlet problem  -div(a grad u) = f  on the interior nodes, u = g on the
/// boundary nodes. The divergence is discretized with the standard 5/7-point
/// stencil and arithmetic face averaging of a, which keeps the interior
/// operator symmetric positive definite and adjoint to the discrete flux.
struct LinearEllipticProblem {
  const Grid* grid = nullptr;
  ScalarField a;    // coefficient, must stay >= lambda > 0
  ScalarField f;    // right-hand side
  BoundaryField g;  // Dirichlet data
  double lambda = 0.0;
};

struct SolveReport {
  int iterations = 0;
  double final_residual = 0.0;  // |b - A u|_2 / |b|_2 (absolute when b == 0)
  double tolerance = 0.0;
  bool converged = false;
};

struct SolveOptions {
  double tol = 1e-10;   // relative residual target
  long max_iterations = 0;  // 0 means 20 * node count
  // Optional warm start; boundary entries of the guess are ignored. Constant
  // solutions are reproduced exactly when the guess already matches them.
  const ScalarField* initial_guess = nullptr;
};

/// Jacobi-preconditioned conjugate gradient on the interior unknowns.
std::pair<ScalarField, SolveReport> solve_dirichlet(
    const LinearEllipticProblem& p, const SolveOptions& opt);
std::pair<ScalarField, SolveReport> solve_dirichlet(
    const LinearEllipticProblem& p, double tol);

/// Dense direct factorization of the same stencil; brute-force oracle for
/// grids up to 2000 nodes.
ScalarField dense_dirichlet(const LinearEllipticProblem& p);

/// Solves  div(eps grad u) = v  with u = eta0 on the boundary. The plus-div
/// sign is folded into the right-hand side before calling solve_dirichlet.
ScalarField l_eps_inverse(const ScalarField& eps, const ScalarField& v,
                          const BoundaryField& eta0, double tol,
                          SolveReport* report = nullptr,
                          const ScalarField* initial_guess = nullptr);

/// Normal trace of the nodal product field a * grad(u).
BoundaryField boundary_flux(const ScalarField& a, const ScalarField& u);

/// One application of the Dirichlet-to-Neumann map for coefficient a: solve
/// the source-free problem with data f_bdry and return its boundary flux.
BoundaryField dn_map(const ScalarField& a, const BoundaryField& f_bdry,
                     double tol, SolveReport* report = nullptr);

/// Relative Euclidean norm of the interior stencil residual b - A u for a
/// given candidate field (boundary entries of u are replaced by p.g).
double stencil_residual(const LinearEllipticProblem& p, const ScalarField& u);

/// The same residual as a nodal field: b - A u on interior nodes, zero on
/// boundary nodes. Useful for volume-weighted residual norms.
ScalarField residual_field(const LinearEllipticProblem& p, const ScalarField& u);

} // namespace elcell
