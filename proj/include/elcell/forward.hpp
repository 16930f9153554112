#pragma once

#include <utility>
#include <vector>

#include "elcell/elliptic.hpp"
#include "elcell/grid.hpp"
#include "elcell/models.hpp"

namespace elcell {

struct PicardOptions {
  int max_outer_iterations = 200;
  // Relative successive-iterate change, discrete 2-norm stacked over all
  // M+1 solution fields.
  double fixed_point_tol = 1e-8;
  // Step fraction in (0,1]; halved on oscillation down to 1/16 and allowed
  // to grow back up to this cap.
  double damping = 1.0;
  double linear_tol = 1e-10;
  double inversion_tol = 1e-12;
  int threads = 1;
  // Optional starting iterate (M+1 fields); the harmonic extension of the
  // boundary data is used when absent. A good guess only speeds things up:
  // accepted iterates still need non-increasing fixed-point residuals.
  const std::vector<ScalarField>* initial_iterate = nullptr;
};

struct PicardReport {
  bool converged = false;
  int iterations = 0;
  double final_change = 0.0;    // last accepted fixed-point residual
  double pde_residual = 0.0;    // max stencil residual, coefficients at the final state
  double final_damping = 1.0;
  bool residual_monotone = true;
  std::vector<double> history;  // fixed-point residual per accepted iterate
};

/// One forward solution of the coupled cell system: species concentrations,
/// temperature, and the substituted potential field sigma(x) =
/// potential(c(x), T(x), x). Immutable once returned.
struct SystemState {
  const Grid* grid = nullptr;
  std::vector<ScalarField> c;       // M species
  ScalarField T;
  ScalarField sigma;
  std::vector<BoundaryField> gamma; // Dirichlet data the state was solved with
  BoundaryField tau;
  PicardReport report;
};

/// Boundary trace of the substituted potential: eta0(x) =
/// potential(gamma(x), tau(x), x) on boundary nodes.
BoundaryField potential_boundary_data(const ModelBundle& bundle,
                                      const std::vector<BoundaryField>& gamma,
                                      const BoundaryField& tau);

/// One frozen-coefficient sweep. v holds the M concentration iterates plus
/// the substituted-potential iterate; each coordinate solves its linear
/// Dirichlet problem with coefficients and sources evaluated on v. The M+1
/// solves are independent and run on up to opts.threads workers.
std::vector<ScalarField> picard_step(const ModelBundle& bundle,
                                     const std::vector<ScalarField>& v,
                                     const std::vector<BoundaryField>& gamma,
                                     const BoundaryField& tau,
                                     const PicardOptions& opts = {});

/// Damped Picard iteration from the harmonic extension of the boundary data.
/// Accepted iterates have non-increasing fixed-point residual; on
/// stagnation or iteration exhaustion a NumericalError carrying the residual
/// history is thrown.
SystemState forward_solve(const ModelBundle& bundle,
                          const std::vector<BoundaryField>& gamma,
                          const BoundaryField& tau,
                          const PicardOptions& opts = {});

/// Closed-form solution for source-free bundles with constant per-species
/// boundary concentrations: c identically gamma, sigma from one linear solve,
/// T by nodewise inversion. Rejects bundles with nonzero sources.
SystemState forward_constant_bc(const ModelBundle& bundle,
                                const std::vector<double>& gamma,
                                const BoundaryField& tau, double tol = 1e-10,
                                const PicardOptions& opts = {});

/// A field together with the volume-weighted residual of
/// -lap(u) = 2 pi^2 u rho(u) at it, rho a bump that equals 1 on the range of
/// the first unit-square eigenfunction.
struct EigenDemoState {
  ScalarField field;
  double residual = 0.0;
};

/// Two distinct solutions of the same zero-Dirichlet semilinear problem on
/// the unit square: the zero field and the first Laplace eigenfunction
/// sin(pi x) sin(pi y) with source factor 2 pi^2. Demonstrates that forward
/// uniqueness fails once sources may grow with the solution.
std::pair<EigenDemoState, EigenDemoState> nonuniqueness_with_sources(
    const Grid& g);

} // namespace elcell
