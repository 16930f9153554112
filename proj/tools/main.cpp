// Command line front end: loads a YAML configuration, applies the common
// overrides, and dispatches to the named workflow.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "elcell/config.hpp"
#include "elcell/workflows.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  double tol = 0.0;
  bool tol_set = false;
};

void add_common_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path,
                  "YAML configuration file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", ov.out, "output directory (default from config)");
  cmd->add_option("--seed", ov.seed, "measurement noise seed")
      ->each([&ov](const std::string&) { ov.seed_set = true; });
  cmd->add_option("--threads", ov.threads, "worker thread count")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--tol", ov.tol,
                  "fixed-point tolerance; the linear tolerance follows at "
                  "tol / 100")
      ->check(CLI::PositiveNumber)
      ->each([&ov](const std::string&) { ov.tol_set = true; });
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"elcell: coupled electrolyser cell simulation and "
               "state-dependent coefficient reconstruction"};
  app.require_subcommand(1);

  const std::vector<std::string> names{
      "forward",
      "measure",
      "verify-linearisation",
      "reconstruct-phi",
      "fit-d",
      "demo-boundary-nonuniqueness",
      "demo-source-nonuniqueness",
      "convergence",
  };
  const std::vector<std::string> blurbs{
      "solve the coupled cell system once and write the state fields",
      "record noisy boundary and probe measurements as JSON lines",
      "check the measured flux response against its linearisation",
      "tabulate the potential from boundary and interior measurements",
      "fit a temperature-affine diffusion family to measured fluxes",
      "show interior potential changes invisible to boundary records",
      "show two interior states sharing identical boundary data",
      "manufactured-solution grid convergence study",
  };

  Overrides ov;
  for (std::size_t i = 0; i < names.size(); ++i)
    add_common_flags(app.add_subcommand(names[i], blurbs[i]), ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Normalize CLI11's exit codes: 0 for --help/--version, 1 for any error.
    const int rc = app.exit(e);
    return rc == 0 ? 0 : elcell::kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  elcell::RunConfig cfg;
  try {
    if (!ov.config_path.empty()) cfg = elcell::load_config(ov.config_path);
    if (!ov.out.empty()) cfg.output = ov.out;
    if (ov.seed_set) cfg.seed = ov.seed;
    if (ov.threads > 0) cfg.threads = ov.threads;
    if (ov.tol_set) {
      cfg.solver.fixed_point_tol = ov.tol;
      cfg.solver.linear_tol = ov.tol / 100.0;
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return elcell::kExitUsage;
  }

  return elcell::run_subcommand(name, cfg);
}
