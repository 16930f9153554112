#pragma once

#include <string>

#include "elcell/config.hpp"

namespace elcell {

// Exit statuses shared with the command line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;

/// Runs one named workflow, writing its outputs (plus a manifest) under
/// cfg.output and printing a short summary to stdout. Returns kExitOk,
/// kExitUsage for validation problems, kExitNumerical for solver failures.
int run_subcommand(const std::string& name, const RunConfig& cfg);

// The individual workflows; validation problems throw std::invalid_argument
// or ConfigError, numerical failures throw NumericalError.
void run_forward(const RunConfig& cfg);
void run_measure(const RunConfig& cfg);
void run_verify_linearisation(const RunConfig& cfg);
void run_reconstruct_phi(const RunConfig& cfg);
void run_fit_d(const RunConfig& cfg);
void run_demo_boundary_nonuniqueness(const RunConfig& cfg);
void run_demo_source_nonuniqueness(const RunConfig& cfg);
void run_convergence(const RunConfig& cfg);

} // namespace elcell
