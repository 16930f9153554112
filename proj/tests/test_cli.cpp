#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "elcell/config.hpp"
#include "elcell/elliptic.hpp"
#include "elcell/io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the installed binary with the given arguments, capturing streams.
RunResult run_cli(const std::string& args, const fs::path& dir) {
  const char* bin = std::getenv("ELCELL_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "ELCELL_BIN must point at the cli binary");
  fs::create_directories(dir);
  const fs::path outf = dir / "stdout.txt";
  const fs::path errf = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + bin + "\" " + args + " >" +
                          outf.string() + " 2>" + errf.string();
  const int raw = std::system(cmd.c_str());
  REQUIRE(raw != -1);
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(outf);
  r.err = slurp(errf);
  return r;
}

const fs::path kRoot = "cli_test_out";

} // namespace

TEST_CASE("help exits zero, parse errors exit one") {
  const auto help = run_cli("--help", kRoot / "help");
  CHECK(help.code == 0);
  CHECK(help.out.find("forward") != std::string::npos);

  CHECK(run_cli("", kRoot / "nosub").code == 1);
  CHECK(run_cli("no-such-command", kRoot / "badsub").code == 1);
  CHECK(run_cli("forward --no-such-flag", kRoot / "badflag").code == 1);
  CHECK(run_cli("forward --config /does/not/exist.yaml", kRoot / "badcfg").code == 1);
}

TEST_CASE("convergence run writes its artifacts and exits zero") {
  const fs::path dir = kRoot / "conv";
  fs::create_directories(dir);
  spit(dir / "cfg.yaml",
       "convergence:\n"
       "  n_list: [5, 9]\n");
  const auto r = run_cli("convergence --config " + (dir / "cfg.yaml").string() +
                             " --out " + (dir / "out").string(),
                         dir);
  CHECK(r.code == 0);
  for (const char* name : {"convergence.json", "convergence.csv",
                           "effective_config.yaml", "manifest.json"})
    CHECK(fs::exists(dir / "out" / name));

  const json j = json::parse(slurp(dir / "out" / "convergence.json"));
  REQUIRE(j["runs"].size() == 2);
  CHECK(j["runs"][1]["l2_error"].get<double>() <
        j["runs"][0]["l2_error"].get<double>());
  CHECK(j["error_ratios"].size() == 1);

  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  CHECK(manifest["command"] == "convergence");
  CHECK(manifest["timings_seconds"].contains("total"));
}

TEST_CASE("config errors name the key and exit one") {
  const fs::path dir = kRoot / "badkey";
  fs::create_directories(dir);
  spit(dir / "cfg.yaml", "seed: 1\nnot_a_key: true\n");
  const auto r = run_cli("forward --config " + (dir / "cfg.yaml").string() +
                             " --out " + (dir / "out").string(),
                         dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("config error") != std::string::npos);
  CHECK(r.err.find("not_a_key") != std::string::npos);
}

TEST_CASE("numerical failures exit two") {
  const fs::path dir = kRoot / "unident";
  fs::create_directories(dir);
  // Constant species data carries no information about the diffusion family.
  spit(dir / "cfg.yaml",
       "grid:\n"
       "  n: [9, 9]\n"
       "experiments:\n"
       "  - gamma: [\"1\"]\n"
       "    tau: \"1 + 0.2*x2\"\n");
  const auto r = run_cli("fit-d --config " + (dir / "cfg.yaml").string() +
                             " --out " + (dir / "out").string(),
                         dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("numerical failure") != std::string::npos);
  CHECK(r.err.find("identifiable") != std::string::npos);
}

TEST_CASE("forward run reproduces the library solution") {
  const fs::path dir = kRoot / "forward";
  fs::create_directories(dir);
  // Identity potential and zero charge: T is the harmonic extension of tau.
  spit(dir / "cfg.yaml",
       "grid:\n"
       "  n: [9, 9]\n"
       "model:\n"
       "  charge: [0.0]\n"
       "  potential:\n"
       "    conc_coef: [0.0]\n"
       "experiments:\n"
       "  - gamma: [\"1\"]\n"
       "    tau: \"1 + 0.2*x2\"\n");
  const auto r = run_cli("forward --config " + (dir / "cfg.yaml").string() +
                             " --out " + (dir / "out").string(),
                         dir);
  REQUIRE(r.code == 0);

  using namespace elcell;
  const Grid g = build_grid(2, {9, 9});
  BoundaryField tau(g);
  for (std::size_t k = 0; k < tau.size(); ++k)
    tau[k] = 1.0 + 0.2 * g.position(g.boundary_ids()[k])[1];
  const ScalarField ref =
      l_eps_inverse(ScalarField(g, 1.0), ScalarField(g, 0.0), tau, 1e-12);

  const std::string csv = slurp(dir / "out" / "state" / "T.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);  // version
  std::getline(lines, line);  // header
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    const auto last = line.rfind(',');
    REQUIRE(last != std::string::npos);
    const std::size_t id = std::stoul(line.substr(0, line.find(',')));
    const double val = std::stod(line.substr(last + 1));
    CHECK(std::abs(val - ref[id]) <= 1e-9);
    ++rows;
  }
  CHECK(rows == g.node_count());
}

TEST_CASE("measurement batches are seed-deterministic") {
  const fs::path dir = kRoot / "measure";
  fs::create_directories(dir);
  spit(dir / "cfg.yaml",
       "seed: 11\n"
       "grid:\n"
       "  n: [9, 9]\n"
       "noise:\n"
       "  voltage_sd: 0.001\n"
       "  flux_sd: 0.001\n"
       "  temp_sd: 0.001\n"
       "probes:\n"
       "  - [0.5, 0.5]\n");
  const std::string cfg = (dir / "cfg.yaml").string();
  REQUIRE(run_cli("measure --config " + cfg + " --out " + (dir / "a").string(),
                  dir).code == 0);
  REQUIRE(run_cli("measure --config " + cfg + " --out " + (dir / "b").string(),
                  dir).code == 0);
  REQUIRE(run_cli("measure --config " + cfg + " --seed 12 --out " +
                      (dir / "c").string(),
                  dir).code == 0);

  const std::string a = slurp(dir / "a" / "measurements.jsonl");
  const std::string b = slurp(dir / "b" / "measurements.jsonl");
  const std::string c = slurp(dir / "c" / "measurements.jsonl");
  CHECK(a == b);
  CHECK(a != c);
  CHECK(!a.empty());

  // Every line parses, starting with the header record.
  std::istringstream lines(a);
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(json::parse(line)["record"] == "header");
  std::size_t records = 0;
  while (std::getline(lines, line)) {
    const json rec = json::parse(line);
    CHECK(rec.contains("family"));
    ++records;
  }
  CHECK(records >= 2);
}

TEST_CASE("the effective config is a reusable fixpoint") {
  const fs::path dir = kRoot / "effective";
  fs::create_directories(dir);
  spit(dir / "cfg.yaml", "seed: 3\ngrid:\n  n: [9, 9]\n");
  REQUIRE(run_cli("forward --config " + (dir / "cfg.yaml").string() +
                      " --out " + (dir / "out").string(),
                  dir).code == 0);
  const std::string text = slurp(dir / "out" / "effective_config.yaml");
  const elcell::RunConfig cfg = elcell::parse_config(text);
  CHECK(elcell::emit_config(cfg) == text);
  CHECK(cfg.seed == 3);
}
