#include "elcell/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "elcell/util.hpp"

namespace elcell::io {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json point_json(const Point& p, int dim) {
  ordered_json a = ordered_json::array();
  for (int ax = 0; ax < dim; ++ax) a.push_back(p[ax]);
  return a;
}

ordered_json boundary_values_json(const BoundaryField& f) {
  ordered_json a = ordered_json::array();
  for (double v : f.v) a.push_back(v);
  return a;
}

ordered_json experiment_json(const Experiment& e) {
  ordered_json j;
  ordered_json gamma = ordered_json::array();
  for (const auto& gi : e.gamma) gamma.push_back(boundary_values_json(gi));
  j["gamma"] = std::move(gamma);
  j["tau"] = boundary_values_json(e.tau);
  return j;
}

std::string dump_doc(const ordered_json& j) { return j.dump(2) + "\n"; }

void append_point_csv(std::ostringstream& out, const Point& p, int dim) {
  for (int ax = 0; ax < dim; ++ax) out << ',' << format_double(p[ax]);
}

const char* provenance_name(Provenance p) {
  return p == Provenance::boundary_voltage ? "boundary_voltage"
                                           : "interior_temperature";
}

} // namespace

std::string version_line() { return std::string("# elcell ") + kVersion; }

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV

std::string field_csv(const ScalarField& u) {
  const Grid& g = *u.grid;
  std::ostringstream out;
  out << version_line() << "\n";
  out << (g.dim() == 2 ? "node_id,x,y,value" : "node_id,x,y,z,value") << "\n";
  for (std::size_t id = 0; id < g.node_count(); ++id) {
    out << id;
    append_point_csv(out, g.position(id), g.dim());
    out << ',' << format_double(u[id]) << "\n";
  }
  return out.str();
}

std::string boundary_csv(const BoundaryField& f) {
  const Grid& g = *f.grid;
  std::ostringstream out;
  out << version_line() << "\n";
  out << (g.dim() == 2 ? "node_id,x,y,value" : "node_id,x,y,z,value") << "\n";
  for (std::size_t b = 0; b < f.size(); ++b) {
    const std::size_t id = g.boundary_ids()[b];
    out << id;
    append_point_csv(out, g.position(id), g.dim());
    out << ',' << format_double(f[b]) << "\n";
  }
  return out.str();
}

std::string table_csv(const ReconstructionTable& table, int dim) {
  const std::size_t m =
      table.reference_z().empty() ? 0 : table.reference_z().size() - 1;
  std::ostringstream out;
  out << version_line() << "\n";
  for (std::size_t i = 1; i <= m; ++i) out << 'p' << i << ',';
  out << "s_or_t,x,y";
  if (dim == 3) out << ",z";
  out << ",value,provenance\n";
  for (const auto& e : table.entries()) {
    if (!e.ok) continue;
    for (double p : e.p) out << format_double(p) << ',';
    out << format_double(e.key);
    append_point_csv(out, e.x, dim);
    out << ',' << format_double(e.value) << ',' << provenance_name(e.provenance)
        << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON documents

std::string grid_json(const Grid& g) {
  ordered_json j;
  j["version"] = kVersion;
  j["dim"] = g.dim();
  ordered_json n = ordered_json::array();
  ordered_json extent = ordered_json::array();
  for (int ax = 0; ax < g.dim(); ++ax) {
    n.push_back(g.nodes_along(ax));
    extent.push_back(ordered_json::array({g.lo(ax), g.hi(ax)}));
  }
  j["n"] = std::move(n);
  j["extent"] = std::move(extent);
  return dump_doc(j);
}

std::string solve_report_json(const SolveReport& rep) {
  ordered_json j;
  j["version"] = kVersion;
  j["iterations"] = rep.iterations;
  j["final_residual"] = rep.final_residual;
  j["tolerance"] = rep.tolerance;
  j["converged"] = rep.converged;
  return dump_doc(j);
}

std::string picard_report_json(const PicardReport& rep) {
  ordered_json j;
  j["version"] = kVersion;
  j["converged"] = rep.converged;
  j["iterations"] = rep.iterations;
  j["final_change"] = rep.final_change;
  j["pde_residual"] = rep.pde_residual;
  j["final_damping"] = rep.final_damping;
  j["residual_monotone"] = rep.residual_monotone;
  j["history"] = rep.history;
  return dump_doc(j);
}

std::string rate_report_json(const RateReport& rep) {
  ordered_json j;
  j["version"] = kVersion;
  j["t"] = rep.t;
  j["error"] = rep.error;
  ordered_json conv = ordered_json::array();
  for (bool b : rep.converged) conv.push_back(b);
  j["converged"] = std::move(conv);
  j["slope"] = rep.slope;
  j["fit_points"] = rep.fit_points;
  return dump_doc(j);
}

std::string fit_report_json(const std::vector<double>& theta,
                            const FitReport& rep) {
  ordered_json j;
  j["version"] = kVersion;
  j["theta"] = theta;
  j["final_loss"] = rep.final_loss;
  j["gradient_norm"] = rep.gradient_norm;
  j["iterations"] = rep.iterations;
  j["converged"] = rep.converged;
  j["jacobian_condition"] = rep.jacobian_condition;
  j["note"] = rep.note;
  ordered_json trace = ordered_json::array();
  for (const auto& it : rep.trace) {
    ordered_json t;
    t["theta"] = it.theta;
    t["loss"] = it.loss;
    t["lm"] = it.lm;
    trace.push_back(std::move(t));
  }
  j["trace"] = std::move(trace);
  return dump_doc(j);
}

namespace {

ordered_json stats_json(const OffsetStats& st) {
  ordered_json j;
  j["mean"] = st.mean;
  j["stddev"] = st.stddev;
  j["count"] = st.count;
  return j;
}

} // namespace

std::string offset_stats_json(const OffsetStats& boundary,
                              const OffsetStats& interior,
                              const OffsetStats& combined) {
  ordered_json j;
  j["version"] = kVersion;
  j["boundary"] = stats_json(boundary);
  j["interior"] = stats_json(interior);
  j["combined"] = stats_json(combined);
  return dump_doc(j);
}

std::string table_flags_json(const ReconstructionTable& table) {
  ordered_json j;
  j["version"] = kVersion;
  j["total"] = table.entries().size();
  j["ok_count"] = table.ok_count();
  ordered_json flagged = ordered_json::array();
  for (const auto& e : table.entries()) {
    if (e.ok) continue;
    ordered_json f;
    f["p"] = e.p;
    f["s_or_t"] = e.key;
    f["x"] = point_json(e.x, 3);
    f["provenance"] = provenance_name(e.provenance);
    f["note"] = e.note;
    flagged.push_back(std::move(f));
  }
  j["flagged"] = std::move(flagged);
  return dump_doc(j);
}

std::string manifest_json(
    const std::string& command, std::uint64_t config_hash, std::uint64_t seed,
    const std::vector<std::pair<std::string, double>>& timings_seconds) {
  ordered_json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  ordered_json versions;
  versions["elcell"] = kVersion;
  versions["compiler"] = __VERSION__;
  j["versions"] = std::move(versions);
  ordered_json timings;
  for (const auto& [name, sec] : timings_seconds) timings[name] = sec;
  j["timings_seconds"] = std::move(timings);
  return dump_doc(j);
}

// ---------------------------------------------------------------------------
// Measurement batches

std::string jsonl_header() {
  ordered_json j;
  j["record"] = "header";
  j["elcell"] = kVersion;
  return j.dump();
}

std::string record_cauchy(const Experiment& e, const Measured<CauchyRecord>& m) {
  ordered_json j;
  j["family"] = "cauchy";
  j["data"] = experiment_json(e);
  ordered_json flux = ordered_json::array();
  for (const auto& fi : m.value.flux) flux.push_back(boundary_values_json(fi));
  j["flux"] = std::move(flux);
  if (m.value.temp_flux)
    j["temp_flux"] = boundary_values_json(*m.value.temp_flux);
  else
    j["temp_flux"] = nullptr;
  j["noise_seed"] = m.noise_seed;
  return j.dump();
}

std::string record_voltage(const Experiment& e, std::size_t x_node,
                           std::size_t y_node, const Measured<double>& m) {
  ordered_json j;
  j["family"] = "voltage";
  j["data"] = experiment_json(e);
  j["x_node"] = x_node;
  j["y_node"] = y_node;
  j["value"] = m.value;
  j["noise_seed"] = m.noise_seed;
  return j.dump();
}

std::string record_boundary_voltages(const Experiment& e, std::size_t ref_node,
                                     const Measured<BoundaryField>& m) {
  ordered_json j;
  j["family"] = "boundary_voltages";
  j["data"] = experiment_json(e);
  j["ref_node"] = ref_node;
  j["values"] = boundary_values_json(m.value);
  j["noise_seed"] = m.noise_seed;
  return j.dump();
}

std::string record_probe_temperatures(const Experiment& e,
                                      const std::vector<Point>& points,
                                      const Measured<std::vector<double>>& m) {
  ordered_json j;
  j["family"] = "probe_temperatures";
  j["data"] = experiment_json(e);
  const int dim = e.tau.grid ? e.tau.grid->dim() : 3;
  ordered_json pts = ordered_json::array();
  for (const auto& p : points) pts.push_back(point_json(p, dim));
  j["points"] = std::move(pts);
  j["values"] = m.value;
  j["noise_seed"] = m.noise_seed;
  return j.dump();
}

// ---------------------------------------------------------------------------
// State directories

void write_state(const std::filesystem::path& dir, const SystemState& state) {
  std::filesystem::create_directories(dir);
  write_text(dir / "grid.json", grid_json(*state.grid));
  for (std::size_t i = 0; i < state.c.size(); ++i) {
    write_text(dir / ("c" + std::to_string(i + 1) + ".csv"),
               field_csv(state.c[i]));
    write_text(dir / ("gamma" + std::to_string(i + 1) + ".csv"),
               boundary_csv(state.gamma[i]));
  }
  write_text(dir / "T.csv", field_csv(state.T));
  write_text(dir / "sigma.csv", field_csv(state.sigma));
  write_text(dir / "tau.csv", boundary_csv(state.tau));
  write_text(dir / "report.json", picard_report_json(state.report));
}

} // namespace elcell::io
