#include "elcell/workflows.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "elcell/elliptic.hpp"
#include "elcell/inverse.hpp"
#include "elcell/io.hpp"
#include "elcell/measure.hpp"
#include "elcell/util.hpp"

namespace elcell {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir(cfg.output);
  fs::create_directories(dir);
  return dir;
}

PicardOptions solver_options(const RunConfig& cfg) {
  PicardOptions o = cfg.solver;
  o.threads = cfg.threads;
  o.initial_iterate = nullptr;
  return o;
}

Experiment realize_spec(const ExperimentSpec& spec, const Grid& g) {
  Experiment e;
  e.gamma.reserve(spec.gamma.size());
  for (const auto& s : spec.gamma)
    e.gamma.push_back(sample_boundary(g, boundary_expression(s)));
  e.tau = sample_boundary(g, boundary_expression(spec.tau));
  return e;
}

DataRecipe recipe_of(const ExperimentSpec& spec) {
  DataRecipe r;
  for (const auto& s : spec.gamma) r.gamma.push_back(boundary_expression(s));
  r.tau = boundary_expression(spec.tau);
  return r;
}

std::size_t node_from_index(const Grid& g, const std::vector<int>& idx) {
  return g.index(idx[0], idx.size() > 1 ? idx[1] : 0,
                 idx.size() > 2 ? idx[2] : 0);
}

Point point_of(const std::vector<double>& v) {
  Point p{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < v.size() && i < 3; ++i) p[i] = v[i];
  return p;
}

Point domain_centre(const Grid& g) {
  Point p{0.0, 0.0, 0.0};
  for (int ax = 0; ax < g.dim(); ++ax) p[ax] = 0.5 * (g.lo(ax) + g.hi(ax));
  return p;
}

// Deterministic uniform stream for sample placement.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : state_(seed) {}
  double next() {
    return static_cast<double>(splitmix64(state_++) >> 11) * 0x1p-53;
  }
  double in(double lo, double hi) { return lo + (hi - lo) * next(); }

 private:
  std::uint64_t state_;
};

void write_doc(const fs::path& dir, const char* name, const std::string& text) {
  io::write_text(dir / name, text);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

} // namespace

// ---------------------------------------------------------------------------
// forward

void run_forward(const RunConfig& cfg) {
  const Grid g = build_grid_from(cfg.grid);
  const ModelBundle bundle = build_bundle(cfg.model, g);
  const Experiment e = realize_spec(cfg.experiments.front(), g);
  const SystemState state =
      forward_solve(bundle, e.gamma, e.tau, solver_options(cfg));
  io::write_state(out_dir(cfg) / "state", state);
  std::cout << "forward: converged in " << state.report.iterations
            << " iterations, fixed-point change "
            << format_double(state.report.final_change) << ", pde residual "
            << format_double(state.report.pde_residual) << "\n";
}

// ---------------------------------------------------------------------------
// measure

void run_measure(const RunConfig& cfg) {
  const Grid g = build_grid_from(cfg.grid);
  const ModelBundle bundle = build_bundle(cfg.model, g);
  const Laboratory lab(g, bundle, solver_options(cfg), cfg.noise, cfg.seed);

  std::vector<Point> probes;
  for (const auto& p : cfg.probes) probes.push_back(point_of(p));
  const std::size_t ref_node = g.boundary_ids().front();

  std::ostringstream lines;
  lines << io::jsonl_header() << "\n";
  std::size_t records = 0;
  for (const auto& spec : cfg.experiments) {
    const Experiment e = realize_spec(spec, g);
    lines << io::record_cauchy(e, lab.cauchy(e, true)) << "\n";
    lines << io::record_boundary_voltages(e, ref_node,
                                          lab.boundary_voltages(e, ref_node))
          << "\n";
    records += 2;
    if (!probes.empty()) {
      lines << io::record_probe_temperatures(e, probes,
                                             lab.probe_temperatures(e, probes))
            << "\n";
      ++records;
    }
  }
  write_doc(out_dir(cfg), "measurements.jsonl", lines.str());
  std::cout << "measure: " << records << " records from "
            << cfg.experiments.size() << " experiments ("
            << lab.solves() << " forward solves)\n";
}

// ---------------------------------------------------------------------------
// verify-linearisation

void run_verify_linearisation(const RunConfig& cfg) {
  const Grid g = build_grid_from(cfg.grid);
  const ModelBundle bundle = build_bundle(cfg.model, g);
  if (!bundle.source_free())
    throw std::invalid_argument(
        "verify-linearisation requires a source-free model");

  const LinearisationSpec& lin = cfg.linearisation;
  const BoundaryField eta0 = sample_boundary(g, boundary_expression(lin.eta0));
  std::vector<BoundaryField> f;
  for (const auto& s : lin.f)
    f.push_back(sample_boundary(g, boundary_expression(s)));
  const std::vector<double> t_list =
      lin.t_list.empty() ? default_rate_t_list() : lin.t_list;

  const RateReport rep = linearisation_rate(bundle, g, lin.mu, eta0, f, t_list,
                                            solver_options(cfg));
  write_doc(out_dir(cfg), "rate_report.json", io::rate_report_json(rep));
  std::cout << "verify-linearisation: fitted slope "
            << format_double(rep.slope) << " over " << rep.fit_points
            << " points, smallest error "
            << format_double(rep.error.back()) << "\n";
}

// ---------------------------------------------------------------------------
// reconstruct-phi

void run_reconstruct_phi(const RunConfig& cfg) {
  const Grid g = build_grid_from(cfg.grid);
  const ModelBundle bundle = build_bundle(cfg.model, g);
  if (!bundle.source_free())
    throw std::invalid_argument("reconstruct-phi requires a source-free model");
  const Laboratory lab(g, bundle, solver_options(cfg), cfg.noise, cfg.seed);
  const ReconstructSpec& rc = cfg.reconstruct;

  ReferenceSpec ref;
  ref.z0 = rc.z0;
  ref.x0_node = node_from_index(g, rc.x0_index);
  if (!g.is_boundary(ref.x0_node))
    throw std::invalid_argument("reconstruct.x0_index: not a boundary node");

  // Boundary table over random state samples at evenly spread boundary nodes.
  UniformStream rng(splitmix64(cfg.seed ^ 0x7265636f6e737421ull));
  std::vector<std::vector<double>> z_samples;
  for (int i = 0; i < rc.boundary_z_count; ++i) {
    std::vector<double> z;
    for (const auto& r : rc.conc_range) z.push_back(rng.in(r[0], r[1]));
    z.push_back(rng.in(rc.temp_range[0], rc.temp_range[1]));
    z_samples.push_back(std::move(z));
  }
  const auto& bids = g.boundary_ids();
  const std::size_t nb = bids.size();
  const std::size_t want =
      std::min<std::size_t>(static_cast<std::size_t>(rc.boundary_x_count),
                            nb - 1);
  std::vector<bool> used(nb, false);
  std::vector<std::size_t> x_nodes;
  for (std::size_t k = 0; k < want; ++k) {
    std::size_t ord = k * nb / want;
    while (used[ord] || bids[ord] == ref.x0_node) ord = (ord + 1) % nb;
    used[ord] = true;
    x_nodes.push_back(bids[ord]);
  }
  ReconstructionTable boundary_table = reconstruct_phi_boundary(
      lab, z_samples, x_nodes, ref, rc.bump_radius, cfg.threads);

  // Temperature slice at the reference concentrations, then the interior
  // table at the probe point.
  std::vector<double> mu(rc.z0.begin(), rc.z0.end() - 1);
  const BoundaryPotentialSlice slice = reconstruct_boundary_slice(
      lab, mu, rc.temp_range[0], rc.temp_range[1], rc.slice_count, ref,
      rc.bump_radius);

  const Point y = rc.probe.empty() ? domain_centre(g) : point_of(rc.probe);
  double w_lo = -std::numeric_limits<double>::infinity();
  double w_hi = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < nb; ++b) {
    w_lo = std::max(w_lo, slice.phi_hat(slice.t_samples().front(), b));
    w_hi = std::min(w_hi, slice.phi_hat(slice.t_samples().back(), b));
  }
  if (!(w_lo < w_hi))
    throw NumericalError("slice covers no common potential range");
  const double margin = 0.02 * (w_hi - w_lo);

  double qdot = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) qdot += lab.charge()[i] * mu[i];
  const ScalarField omega0 =
      l_eps_inverse(lab.permittivity().sample(g), ScalarField(g, qdot),
                    BoundaryField(g, 0.0), cfg.solver.linear_tol);
  const double w0y = interpolate(omega0, y);

  std::vector<double> s_samples;
  for (int i = 0; i < rc.interior_count; ++i) {
    const double a = rc.interior_count == 1
                         ? 0.5
                         : static_cast<double>(i) /
                               static_cast<double>(rc.interior_count - 1);
    s_samples.push_back(w0y + (w_lo + margin) +
                        a * ((w_hi - margin) - (w_lo + margin)));
  }
  const InteriorResult interior =
      reconstruct_phi_interior(lab, slice, s_samples, y, ref);

  // Offsets against the configured truth (self-test semantics: the hidden
  // model is known here, so the gauge constant is directly observable).
  const PotentialModel& truth = bundle.potential;
  const auto truth_fn = [&](const std::vector<double>& p, double key,
                            const Point& x) {
    return truth.value(std::span<const double>(p.data(), p.size()), key, x);
  };
  const OffsetStats boundary_stats = offset_statistics(boundary_table, truth_fn);
  const OffsetStats interior_stats = offset_statistics(interior.table, truth_fn);
  ReconstructionTable merged = boundary_table;
  merged.merge(interior.table);
  const OffsetStats combined = offset_statistics(merged, truth_fn);

  const fs::path dir = out_dir(cfg);
  write_doc(dir, "phi_boundary.csv", io::table_csv(boundary_table, g.dim()));
  write_doc(dir, "phi_interior.csv", io::table_csv(interior.table, g.dim()));
  write_doc(dir, "phi_table.csv", io::table_csv(merged, g.dim()));
  write_doc(dir, "flags.json", io::table_flags_json(merged));
  write_doc(dir, "offsets.json",
            io::offset_stats_json(boundary_stats, interior_stats, combined));

  std::cout << "reconstruct-phi: " << boundary_table.ok_count()
            << " boundary + " << interior.table.ok_count()
            << " interior samples (" << interior.skipped_s.size()
            << " targets out of range), offset stddev "
            << format_double(combined.stddev) << " about arbitrary mean "
            << format_double(combined.mean) << "\n";
}

// ---------------------------------------------------------------------------
// fit-d

void run_fit_d(const RunConfig& cfg) {
  const Grid fit_grid = build_grid_from(cfg.grid);
  GridSpec data_spec = cfg.grid;
  data_spec.n = cfg.fit.data_n;
  if (data_spec.n.empty())
    for (int n : cfg.grid.n) data_spec.n.push_back(2 * n - 1);
  const Grid data_grid = build_grid_from(data_spec);

  const ModelBundle truth = build_bundle(cfg.model, data_grid);
  const Laboratory lab(data_grid, truth, solver_options(cfg), cfg.noise,
                       cfg.seed);

  std::vector<DataRecipe> recipes;
  for (const auto& spec : cfg.experiments) recipes.push_back(recipe_of(spec));

  DiffusionFitProblem prob;
  prob.theta_init = cfg.fit.theta_init;
  prob.theta_box = cfg.fit.theta_box;
  prob.fit_grid = &fit_grid;
  prob.solver = solver_options(cfg);
  const ModelSpec model_spec = cfg.model;
  const std::array<double, 2> temp_range = cfg.fit.temp_range;
  if (prob.theta_init.size() != 2)
    throw std::invalid_argument(
        "fit.theta_init: the temperature-affine family has two parameters");
  prob.make_bundle = [model_spec, temp_range,
                      &fit_grid](const std::vector<double>& theta) {
    ModelSpec spec = model_spec;
    for (auto& d : spec.diffusion) {
      d = DiffusionSpec{};
      d.kind = "affine_temp";
      d.base = theta[0];
      d.slope = theta[1];
      d.temp_range = temp_range;
    }
    return build_bundle(spec, fit_grid);
  };
  // Check the whole parameter box yields valid models before measuring.
  for (int corner = 0; corner < 4; ++corner) {
    const std::vector<double> theta{
        cfg.fit.theta_box[0][corner & 1 ? 1 : 0],
        cfg.fit.theta_box[1][corner & 2 ? 1 : 0]};
    try {
      (void)prob.make_bundle(theta);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(
          std::string("fit.theta_box admits an invalid model: ") + e.what());
    }
  }

  prob.data = measure_flux_dataset(lab, recipes);

  FitOptions fopts;
  fopts.threads = cfg.threads;
  const auto [theta, rep] = fit_diffusion(prob, fopts);

  write_doc(out_dir(cfg), "fit_report.json", io::fit_report_json(theta, rep));
  std::ostringstream tstr;
  for (std::size_t i = 0; i < theta.size(); ++i)
    tstr << (i ? ", " : "") << format_double(theta[i]);
  std::cout << "fit-d: theta = (" << tstr.str() << ") after "
            << rep.iterations << " iterations, loss "
            << format_double(rep.final_loss)
            << (rep.converged ? "" : " [not converged]") << "\n";
}

// ---------------------------------------------------------------------------
// demo-boundary-nonuniqueness

void run_demo_boundary_nonuniqueness(const RunConfig& cfg) {
  const Grid g = build_grid_from(cfg.grid);
  const ModelBundle base = build_bundle(cfg.model, g);
  const DemoBoundarySpec& demo = cfg.demo_boundary;
  const Point center =
      demo.center.empty() ? domain_centre(g) : point_of(demo.center);
  for (int ax = 0; ax < g.dim(); ++ax) {
    if (center[ax] - g.lo(ax) <= demo.radius ||
        g.hi(ax) - center[ax] <= demo.radius)
      throw std::invalid_argument(
          "demo_boundary: the bump ball must stay inside the domain");
  }

  ModelBundle bumped = base;
  bumped.potential =
      make_bumped_potential(base.potential, center, demo.radius, demo.amp);

  const Experiment e = realize_spec(cfg.experiments.front(), g);
  const PicardOptions opts = solver_options(cfg);
  const SystemState sa = forward_solve(base, e.gamma, e.tau, opts);
  const SystemState sb = forward_solve(bumped, e.gamma, e.tau, opts);

  const CauchyRecord ra = cauchy_record(sa, base, true);
  const CauchyRecord rb = cauchy_record(sb, bumped, true);

  double voltage_diff = 0.0, flux_diff = 0.0, temp_flux_diff = 0.0;
  const std::size_t ref = g.boundary_ids().front();
  for (std::size_t b = 0; b < g.boundary_count(); ++b) {
    const double va = voltage(sa, g.boundary_ids()[b], ref);
    const double vb = voltage(sb, g.boundary_ids()[b], ref);
    voltage_diff = std::max(voltage_diff, std::abs(va - vb));
    for (std::size_t i = 0; i < ra.flux.size(); ++i)
      flux_diff = std::max(flux_diff, std::abs(ra.flux[i][b] - rb.flux[i][b]));
    temp_flux_diff = std::max(
        temp_flux_diff, std::abs(ra.temp_flux->v[b] - rb.temp_flux->v[b]));
  }
  const double interior_diff =
      std::abs(interpolate(sa.T, center) - interpolate(sb.T, center));

  ordered_json j;
  j["version"] = io::kVersion;
  j["amp"] = demo.amp;
  j["radius"] = demo.radius;
  ordered_json cj = ordered_json::array();
  for (int ax = 0; ax < g.dim(); ++ax) cj.push_back(center[ax]);
  j["center"] = std::move(cj);
  j["boundary_voltage_diff"] = voltage_diff;
  j["species_flux_diff"] = flux_diff;
  j["temp_flux_diff"] = temp_flux_diff;
  j["interior_temp_diff_at_center"] = interior_diff;
  write_doc(out_dir(cfg), "demo_boundary.json", j.dump(2) + "\n");

  std::cout << "demo-boundary-nonuniqueness: boundary discrepancies "
            << format_double(std::max(
                   {voltage_diff, flux_diff, temp_flux_diff}))
            << " vs interior temperature difference "
            << format_double(interior_diff) << " at the bump centre\n";
}

// ---------------------------------------------------------------------------
// demo-source-nonuniqueness

void run_demo_source_nonuniqueness(const RunConfig& cfg) {
  ordered_json runs = ordered_json::array();
  std::vector<double> hs, residuals;
  for (int n : cfg.demo_source.n_list) {
    const Grid g = build_grid(2, {n, n});
    const auto [zero_state, eigen_state] = nonuniqueness_with_sources(g);
    ordered_json r;
    r["n"] = n;
    r["h"] = g.spacing(0);
    r["zero_residual"] = zero_state.residual;
    r["eigen_residual"] = eigen_state.residual;
    runs.push_back(std::move(r));
    hs.push_back(std::log(g.spacing(0)));
    residuals.push_back(std::log(eigen_state.residual));
  }
  const double order = fit_slope(hs, residuals);

  ordered_json j;
  j["version"] = io::kVersion;
  j["runs"] = std::move(runs);
  j["fitted_order"] = order;
  write_doc(out_dir(cfg), "demo_source.json", j.dump(2) + "\n");

  std::cout << "demo-source-nonuniqueness: two states share the data; "
               "eigen-state residual order "
            << format_double(order) << " under refinement\n";
}

// ---------------------------------------------------------------------------
// convergence

void run_convergence(const RunConfig& cfg) {
  const auto a_fn = [](const Point& x) { return 1.0 + x[0]; };
  const auto u_fn = [](const Point& x) {
    return (x[0] - x[0] * x[0]) * (x[1] - x[1] * x[1]);
  };
  const auto f_fn = [](const Point& x) {
    return (1.0 + 4.0 * x[0]) * (x[1] - x[1] * x[1]) +
           2.0 * (1.0 + x[0]) * (x[0] - x[0] * x[0]);
  };

  ordered_json runs = ordered_json::array();
  std::vector<double> log_h, log_err, errors;
  std::ostringstream csv;
  csv << io::version_line() << "\n" << "n,h,l2_error\n";
  for (int n : cfg.convergence.n_list) {
    const Grid g = build_grid(2, {n, n});
    LinearEllipticProblem p;
    p.grid = &g;
    p.a = sample_scalar(g, a_fn);
    p.f = sample_scalar(g, f_fn);
    p.g = sample_boundary(g, u_fn);
    p.lambda = 1.0;
    const auto [u, rep] = solve_dirichlet(p, 1e-12);
    ScalarField diff(g);
    for (std::size_t i = 0; i < diff.size(); ++i)
      diff[i] = u[i] - u_fn(g.position(i));
    const double err = volume_norm(diff);
    ordered_json r;
    r["n"] = n;
    r["h"] = g.spacing(0);
    r["l2_error"] = err;
    r["cg_iterations"] = rep.iterations;
    runs.push_back(std::move(r));
    log_h.push_back(std::log(g.spacing(0)));
    log_err.push_back(std::log(err));
    errors.push_back(err);
    csv << n << ',' << format_double(g.spacing(0)) << ','
        << format_double(err) << "\n";
  }
  const double order = fit_slope(log_h, log_err);
  ordered_json ratios = ordered_json::array();
  for (std::size_t i = 0; i + 1 < errors.size(); ++i)
    ratios.push_back(errors[i] / errors[i + 1]);

  ordered_json j;
  j["version"] = io::kVersion;
  j["runs"] = std::move(runs);
  j["error_ratios"] = std::move(ratios);
  j["fitted_order"] = order;
  const fs::path dir = out_dir(cfg);
  write_doc(dir, "convergence.json", j.dump(2) + "\n");
  write_doc(dir, "convergence.csv", csv.str());

  std::cout << "convergence: fitted order " << format_double(order) << " over "
            << cfg.convergence.n_list.size() << " grids\n";
}

// ---------------------------------------------------------------------------
// dispatcher

int run_subcommand(const std::string& name, const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (name == "forward")
      run_forward(cfg);
    else if (name == "measure")
      run_measure(cfg);
    else if (name == "verify-linearisation")
      run_verify_linearisation(cfg);
    else if (name == "reconstruct-phi")
      run_reconstruct_phi(cfg);
    else if (name == "fit-d")
      run_fit_d(cfg);
    else if (name == "demo-boundary-nonuniqueness")
      run_demo_boundary_nonuniqueness(cfg);
    else if (name == "demo-source-nonuniqueness")
      run_demo_source_nonuniqueness(cfg);
    else if (name == "convergence")
      run_convergence(cfg);
    else
      throw std::invalid_argument("unknown subcommand: " + name);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const fs::path dir = out_dir(cfg);
  io::write_text(dir / "effective_config.yaml", emit_config(cfg));
  io::write_text(dir / "manifest.json",
                 io::manifest_json(name, config_hash(cfg), cfg.seed,
                                   {{"total", seconds_since(t0)}}));
  return kExitOk;
}

} // namespace elcell
