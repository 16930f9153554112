#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "elcell/elliptic.hpp"
#include "elcell/forward.hpp"
#include "elcell/grid.hpp"
#include "elcell/inverse.hpp"
#include "elcell/measure.hpp"

namespace elcell::io {

/// Version stamp written into every output file. Outputs are byte-identical
/// across runs with the same configuration and seed, up to this one line.
inline constexpr const char* kVersion = "0.1.0";

/// "# elcell <version>" comment line used as the first line of CSV outputs.
std::string version_line();

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// CSV

/// Nodal field rows "node_id,x,y[,z],value" in node-id order.
std::string field_csv(const ScalarField& u);

/// Boundary field rows in boundary-ordinal order, same columns.
std::string boundary_csv(const BoundaryField& f);

/// Reconstruction samples "p1..pM,s_or_t,x,y[,z],value,provenance"; flagged
/// entries are omitted here and reported by table_flags_json instead.
std::string table_csv(const ReconstructionTable& table, int dim);

// ---------------------------------------------------------------------------
// JSON documents

std::string grid_json(const Grid& g);
std::string solve_report_json(const SolveReport& rep);
std::string picard_report_json(const PicardReport& rep);
std::string rate_report_json(const RateReport& rep);
std::string fit_report_json(const std::vector<double>& theta,
                            const FitReport& rep);
std::string offset_stats_json(const OffsetStats& boundary,
                              const OffsetStats& interior,
                              const OffsetStats& combined);
std::string table_flags_json(const ReconstructionTable& table);

/// Run manifest: configuration hash, component versions, wall-clock timings.
/// The only output exempt from byte-identical determinism.
std::string manifest_json(
    const std::string& command, std::uint64_t config_hash, std::uint64_t seed,
    const std::vector<std::pair<std::string, double>>& timings_seconds);

// ---------------------------------------------------------------------------
// Measurement batches (JSON lines, one record per line)

/// First line of a measurement batch file.
std::string jsonl_header();

std::string record_cauchy(const Experiment& e, const Measured<CauchyRecord>& m);
std::string record_voltage(const Experiment& e, std::size_t x_node,
                           std::size_t y_node, const Measured<double>& m);
std::string record_boundary_voltages(const Experiment& e, std::size_t ref_node,
                                     const Measured<BoundaryField>& m);
std::string record_probe_temperatures(const Experiment& e,
                                      const std::vector<Point>& points,
                                      const Measured<std::vector<double>>& m);

// ---------------------------------------------------------------------------
// State directories

/// One CSV per field (c1..cM, T, sigma, gamma1..gammaM, tau), the grid
/// descriptor, and the convergence report, under dir (created if needed).
void write_state(const std::filesystem::path& dir, const SystemState& state);

} // namespace elcell::io
