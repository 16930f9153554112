#include "elcell/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "elcell/expr.hpp"
#include "elcell/util.hpp"

namespace elcell {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string at(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void check_map(const YAML::Node& n, const std::string& path,
               std::initializer_list<const char*> allowed) {
  if (!n.IsMap()) fail(path, "expected a key/value map");
  for (const auto& kv : n) {
    const std::string key = kv.first.as<std::string>();
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      fail(join(path, key), "unknown key");
  }
}

double as_double(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path, "expected a number");
  try {
    return n.as<double>();
  } catch (const YAML::Exception&) {
    fail(path, "expected a number");
  }
}

int as_int(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path, "expected an integer");
  try {
    return n.as<int>();
  } catch (const YAML::Exception&) {
    fail(path, "expected an integer");
  }
}

std::uint64_t as_uint64(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path, "expected a non-negative integer");
  try {
    return n.as<std::uint64_t>();
  } catch (const YAML::Exception&) {
    fail(path, "expected a non-negative integer");
  }
}

std::string as_string(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path, "expected a string");
  return n.as<std::string>();
}

double get_double(const YAML::Node& map, const char* key,
                  const std::string& path, double dflt) {
  const auto n = map[key];
  return n ? as_double(n, join(path, key)) : dflt;
}

int get_int(const YAML::Node& map, const char* key, const std::string& path,
            int dflt) {
  const auto n = map[key];
  return n ? as_int(n, join(path, key)) : dflt;
}

std::string get_string(const YAML::Node& map, const char* key,
                       const std::string& path, const std::string& dflt) {
  const auto n = map[key];
  return n ? as_string(n, join(path, key)) : dflt;
}

std::vector<double> as_dvec(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence()) fail(path, "expected a list of numbers");
  std::vector<double> out;
  out.reserve(n.size());
  for (std::size_t i = 0; i < n.size(); ++i)
    out.push_back(as_double(n[i], at(path, i)));
  return out;
}

std::vector<int> as_ivec(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence()) fail(path, "expected a list of integers");
  std::vector<int> out;
  out.reserve(n.size());
  for (std::size_t i = 0; i < n.size(); ++i)
    out.push_back(as_int(n[i], at(path, i)));
  return out;
}

std::array<double, 2> as_range(const YAML::Node& n, const std::string& path) {
  const auto v = as_dvec(n, path);
  if (v.size() != 2) fail(path, "expected [lo, hi]");
  return {v[0], v[1]};
}

std::array<double, 3> as_point3(const YAML::Node& n, const std::string& path) {
  const auto v = as_dvec(n, path);
  if (v.empty() || v.size() > 3) fail(path, "expected 1 to 3 numbers");
  std::array<double, 3> out{0.0, 0.0, 0.0};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Section parsers

GridSpec parse_grid(const YAML::Node& n, const std::string& path) {
  GridSpec g;
  if (!n) return g;
  check_map(n, path, {"dim", "n", "extent"});
  g.dim = get_int(n, "dim", path, g.dim);
  if (g.dim != 2 && g.dim != 3) fail(join(path, "dim"), "must be 2 or 3");
  if (n["n"]) g.n = as_ivec(n["n"], join(path, "n"));
  if (g.n.size() != static_cast<std::size_t>(g.dim))
    fail(join(path, "n"), "needs one node count per axis");
  for (std::size_t i = 0; i < g.n.size(); ++i)
    if (g.n[i] < 3) fail(at(join(path, "n"), i), "needs at least 3 nodes");
  if (n["extent"]) {
    const auto e = n["extent"];
    if (!e.IsSequence()) fail(join(path, "extent"), "expected a list of [lo, hi]");
    g.extent.clear();
    for (std::size_t i = 0; i < e.size(); ++i)
      g.extent.push_back(as_range(e[i], at(join(path, "extent"), i)));
    if (g.extent.size() != static_cast<std::size_t>(g.dim))
      fail(join(path, "extent"), "needs one [lo, hi] per axis");
    for (std::size_t i = 0; i < g.extent.size(); ++i)
      if (!(g.extent[i][0] < g.extent[i][1]))
        fail(at(join(path, "extent"), i), "needs lo < hi");
  }
  return g;
}

PotentialSpec parse_potential(const YAML::Node& n, const std::string& path,
                              int species) {
  PotentialSpec p;
  if (!n) {
    p.conc_coef.assign(static_cast<std::size_t>(species), 0.3);
    return p;
  }
  p.kind = get_string(n, "kind", path, p.kind);
  if (p.kind == "affine" || p.kind == "affine_sin") {
    if (p.kind == "affine")
      check_map(n, path, {"kind", "conc_coef", "temp_coef", "offset", "pos_coef"});
    else
      check_map(n, path,
                {"kind", "conc_coef", "temp_coef", "offset", "pos_coef", "amp",
                 "freq"});
    if (n["conc_coef"])
      p.conc_coef = as_dvec(n["conc_coef"], join(path, "conc_coef"));
    else
      p.conc_coef.assign(static_cast<std::size_t>(species), 0.3);
    if (p.conc_coef.size() != static_cast<std::size_t>(species))
      fail(join(path, "conc_coef"), "needs one coefficient per species");
    p.temp_coef = get_double(n, "temp_coef", path, p.temp_coef);
    p.offset = get_double(n, "offset", path, p.offset);
    if (n["pos_coef"]) p.pos_coef = as_point3(n["pos_coef"], join(path, "pos_coef"));
    p.amp = get_double(n, "amp", path, p.amp);
    p.freq = get_double(n, "freq", path, p.freq);
  } else if (p.kind == "separable") {
    check_map(n, path, {"kind", "temp_coef", "conc_amp", "pos_slope", "offset"});
    p.temp_coef = get_double(n, "temp_coef", path, p.temp_coef);
    p.conc_amp = get_double(n, "conc_amp", path, p.conc_amp);
    p.pos_slope = get_double(n, "pos_slope", path, p.pos_slope);
    p.offset = get_double(n, "offset", path, p.offset);
  } else if (p.kind == "expression") {
    check_map(n, path, {"kind", "expr", "slope_lower_bound", "partial_bound"});
    p.expr = get_string(n, "expr", path, "");
    if (p.expr.empty()) fail(join(path, "expr"), "must not be empty");
    p.slope_lower_bound = get_double(n, "slope_lower_bound", path, 0.0);
    p.partial_bound = get_double(n, "partial_bound", path, 0.0);
  } else {
    fail(join(path, "kind"),
         "must be one of affine, affine_sin, separable, expression");
  }
  return p;
}

DiffusionSpec parse_diffusion(const YAML::Node& n, const std::string& path) {
  DiffusionSpec d;
  if (!n) return d;
  d.kind = get_string(n, "kind", path, d.kind);
  if (d.kind == "constant") {
    check_map(n, path, {"kind", "value"});
    d.value = get_double(n, "value", path, d.value);
  } else if (d.kind == "affine_temp") {
    check_map(n, path, {"kind", "base", "slope", "temp_range"});
    d.base = get_double(n, "base", path, d.base);
    d.slope = get_double(n, "slope", path, d.slope);
    if (n["temp_range"])
      d.temp_range = as_range(n["temp_range"], join(path, "temp_range"));
  } else if (d.kind == "sin_mix") {
    check_map(n, path, {"kind", "base", "amp", "conc_w", "temp_w"});
    d.base = get_double(n, "base", path, d.base);
    d.amp = get_double(n, "amp", path, d.amp);
    d.conc_w = get_double(n, "conc_w", path, d.conc_w);
    d.temp_w = get_double(n, "temp_w", path, d.temp_w);
  } else if (d.kind == "position") {
    check_map(n, path, {"kind", "base", "grad"});
    d.base = get_double(n, "base", path, d.base);
    if (n["grad"]) d.grad = as_point3(n["grad"], join(path, "grad"));
  } else if (d.kind == "expression") {
    check_map(n, path, {"kind", "expr", "lower", "upper", "lipschitz"});
    d.expr = get_string(n, "expr", path, "");
    if (d.expr.empty()) fail(join(path, "expr"), "must not be empty");
    d.lower = get_double(n, "lower", path, 0.0);
    d.upper = get_double(n, "upper", path, 0.0);
    d.lipschitz = get_double(n, "lipschitz", path, 0.0);
  } else {
    fail(join(path, "kind"),
         "must be one of constant, affine_temp, sin_mix, position, expression");
  }
  return d;
}

SourceSpec parse_source(const YAML::Node& n, const std::string& path) {
  SourceSpec s;
  if (!n) return s;
  s.kind = get_string(n, "kind", path, s.kind);
  if (s.kind == "zero") {
    check_map(n, path, {"kind"});
  } else if (s.kind == "bounded") {
    check_map(n, path, {"kind", "amp", "freq"});
    s.amp = get_double(n, "amp", path, s.amp);
    s.freq = get_double(n, "freq", path, s.freq);
  } else if (s.kind == "expression") {
    check_map(n, path, {"kind", "expr", "c0", "c1"});
    s.expr = get_string(n, "expr", path, "");
    if (s.expr.empty()) fail(join(path, "expr"), "must not be empty");
    s.c0 = get_double(n, "c0", path, 0.0);
    s.c1 = get_double(n, "c1", path, 0.0);
  } else {
    fail(join(path, "kind"), "must be one of zero, bounded, expression");
  }
  return s;
}

PermittivitySpec parse_permittivity(const YAML::Node& n,
                                    const std::string& path) {
  PermittivitySpec p;
  if (!n) return p;
  p.kind = get_string(n, "kind", path, p.kind);
  if (p.kind == "constant") {
    check_map(n, path, {"kind", "value"});
    p.value = get_double(n, "value", path, p.value);
  } else if (p.kind == "affine") {
    check_map(n, path, {"kind", "base", "grad"});
    p.base = get_double(n, "base", path, p.base);
    if (n["grad"]) p.grad = as_point3(n["grad"], join(path, "grad"));
  } else if (p.kind == "expression") {
    check_map(n, path, {"kind", "expr", "lower"});
    p.expr = get_string(n, "expr", path, "");
    if (p.expr.empty()) fail(join(path, "expr"), "must not be empty");
    p.lower = get_double(n, "lower", path, 0.0);
  } else {
    fail(join(path, "kind"), "must be one of constant, affine, expression");
  }
  return p;
}

ModelSpec parse_model(const YAML::Node& n, const std::string& path) {
  ModelSpec m;
  if (!n) return m;
  check_map(n, path,
            {"species", "charge", "lambda", "potential", "diffusion", "source",
             "permittivity"});
  m.species = get_int(n, "species", path, m.species);
  if (m.species < 1 || m.species > 64)
    fail(join(path, "species"), "must be between 1 and 64");
  if (n["charge"])
    m.charge = as_dvec(n["charge"], join(path, "charge"));
  else
    m.charge.assign(static_cast<std::size_t>(m.species), 1.0);
  if (m.charge.size() != static_cast<std::size_t>(m.species))
    fail(join(path, "charge"), "needs one charge per species");
  m.lambda = get_double(n, "lambda", path, m.lambda);
  if (!(m.lambda > 0.0)) fail(join(path, "lambda"), "must be positive");
  m.potential = parse_potential(n["potential"], join(path, "potential"), m.species);

  auto parse_list = [&](const char* key, auto parser, auto dflt) {
    using T = decltype(dflt);
    std::vector<T> out;
    const auto list = n[key];
    const std::string lpath = join(path, key);
    if (!list) {
      out.assign(static_cast<std::size_t>(m.species), dflt);
      return out;
    }
    if (!list.IsSequence()) fail(lpath, "expected a list, one entry per species");
    for (std::size_t i = 0; i < list.size(); ++i)
      out.push_back(parser(list[i], at(lpath, i)));
    if (out.size() != static_cast<std::size_t>(m.species))
      fail(lpath, "needs one entry per species");
    return out;
  };
  m.diffusion = parse_list("diffusion", parse_diffusion, DiffusionSpec{});
  m.source = parse_list("source", parse_source, SourceSpec{});
  m.permittivity = parse_permittivity(n["permittivity"], join(path, "permittivity"));
  return m;
}

PicardOptions parse_solver(const YAML::Node& n, const std::string& path) {
  PicardOptions o;
  if (!n) return o;
  check_map(n, path,
            {"max_outer_iterations", "fixed_point_tol", "damping", "linear_tol",
             "inversion_tol"});
  o.max_outer_iterations =
      get_int(n, "max_outer_iterations", path, o.max_outer_iterations);
  if (o.max_outer_iterations < 1)
    fail(join(path, "max_outer_iterations"), "must be at least 1");
  o.fixed_point_tol = get_double(n, "fixed_point_tol", path, o.fixed_point_tol);
  o.damping = get_double(n, "damping", path, o.damping);
  o.linear_tol = get_double(n, "linear_tol", path, o.linear_tol);
  o.inversion_tol = get_double(n, "inversion_tol", path, o.inversion_tol);
  if (!(o.fixed_point_tol > 0.0))
    fail(join(path, "fixed_point_tol"), "must be positive");
  if (!(o.damping > 0.0 && o.damping <= 1.0))
    fail(join(path, "damping"), "must lie in (0, 1]");
  if (!(o.linear_tol > 0.0)) fail(join(path, "linear_tol"), "must be positive");
  if (!(o.inversion_tol > 0.0))
    fail(join(path, "inversion_tol"), "must be positive");
  return o;
}

NoiseSpec parse_noise(const YAML::Node& n, const std::string& path) {
  NoiseSpec s;
  if (!n) return s;
  check_map(n, path, {"voltage_sd", "flux_sd", "temp_sd"});
  s.voltage_sd = get_double(n, "voltage_sd", path, 0.0);
  s.flux_sd = get_double(n, "flux_sd", path, 0.0);
  s.temp_sd = get_double(n, "temp_sd", path, 0.0);
  if (s.voltage_sd < 0.0 || s.flux_sd < 0.0 || s.temp_sd < 0.0)
    fail(path, "noise levels must be non-negative");
  return s;
}

void validate_expression(const std::string& text, const std::string& path,
                         bool position_only) {
  try {
    const Expression e = Expression::parse(text);
    if (position_only && e.species_used() > 0)
      fail(path, "boundary data may only reference x1..x3");
  } catch (const std::invalid_argument& err) {
    fail(path, err.what());
  }
}

std::vector<ExperimentSpec> parse_experiments(const YAML::Node& n,
                                              const std::string& path,
                                              int species) {
  std::vector<ExperimentSpec> out;
  if (!n) {
    ExperimentSpec e;
    e.gamma.assign(static_cast<std::size_t>(species), "1");
    out.push_back(std::move(e));
    return out;
  }
  if (!n.IsSequence()) fail(path, "expected a list of experiments");
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string epath = at(path, i);
    check_map(n[i], epath, {"gamma", "tau"});
    ExperimentSpec e;
    if (n[i]["gamma"]) {
      const auto g = n[i]["gamma"];
      const std::string gpath = join(epath, "gamma");
      if (!g.IsSequence()) fail(gpath, "expected a list of expressions");
      e.gamma.clear();
      for (std::size_t k = 0; k < g.size(); ++k)
        e.gamma.push_back(as_string(g[k], at(gpath, k)));
    } else {
      e.gamma.assign(static_cast<std::size_t>(species), "1");
    }
    if (e.gamma.size() != static_cast<std::size_t>(species))
      fail(join(epath, "gamma"), "needs one expression per species");
    e.tau = get_string(n[i], "tau", epath, e.tau);
    for (std::size_t k = 0; k < e.gamma.size(); ++k)
      validate_expression(e.gamma[k], at(join(epath, "gamma"), k), true);
    validate_expression(e.tau, join(epath, "tau"), true);
    out.push_back(std::move(e));
  }
  if (out.empty()) fail(path, "needs at least one experiment");
  return out;
}

LinearisationSpec parse_linearisation(const YAML::Node& n,
                                      const std::string& path, int species) {
  LinearisationSpec l;
  if (!n) {
    l.mu.assign(static_cast<std::size_t>(species), 1.0);
    l.f.assign(static_cast<std::size_t>(species),
               "0.2*sin(3.141592653589793*x1)");
    return l;
  }
  check_map(n, path, {"mu", "eta0", "f", "t_list"});
  if (n["mu"])
    l.mu = as_dvec(n["mu"], join(path, "mu"));
  else
    l.mu.assign(static_cast<std::size_t>(species), 1.0);
  if (l.mu.size() != static_cast<std::size_t>(species))
    fail(join(path, "mu"), "needs one concentration per species");
  l.eta0 = get_string(n, "eta0", path, l.eta0);
  validate_expression(l.eta0, join(path, "eta0"), true);
  if (n["f"]) {
    const auto f = n["f"];
    const std::string fpath = join(path, "f");
    if (!f.IsSequence()) fail(fpath, "expected a list of expressions");
    l.f.clear();
    for (std::size_t k = 0; k < f.size(); ++k)
      l.f.push_back(as_string(f[k], at(fpath, k)));
  } else {
    l.f.assign(static_cast<std::size_t>(species),
               "0.2*sin(3.141592653589793*x1)");
  }
  if (l.f.size() != static_cast<std::size_t>(species))
    fail(join(path, "f"), "needs one expression per species");
  for (std::size_t k = 0; k < l.f.size(); ++k)
    validate_expression(l.f[k], at(join(path, "f"), k), true);
  if (n["t_list"]) {
    l.t_list = as_dvec(n["t_list"], join(path, "t_list"));
    for (std::size_t i = 0; i < l.t_list.size(); ++i) {
      if (!(l.t_list[i] > 0.0))
        fail(at(join(path, "t_list"), i), "must be positive");
      if (i > 0 && !(l.t_list[i] < l.t_list[i - 1]))
        fail(at(join(path, "t_list"), i), "must be strictly decreasing");
    }
    if (l.t_list.size() < 2) fail(join(path, "t_list"), "needs at least 2 values");
  }
  return l;
}

ReconstructSpec parse_reconstruct(const YAML::Node& n, const std::string& path,
                                  int species, int dim) {
  ReconstructSpec r;
  if (!n) {
    r.z0.assign(static_cast<std::size_t>(species) + 1, 1.0);
    r.x0_index.assign(static_cast<std::size_t>(dim), 0);
    r.conc_range.assign(static_cast<std::size_t>(species), {0.8, 1.2});
    return r;
  }
  check_map(n, path,
            {"z0", "x0_index", "bump_radius", "conc_range", "temp_range",
             "boundary_z_count", "boundary_x_count", "slice_count",
             "interior_count", "probe"});
  if (n["z0"])
    r.z0 = as_dvec(n["z0"], join(path, "z0"));
  else
    r.z0.assign(static_cast<std::size_t>(species) + 1, 1.0);
  if (r.z0.size() != static_cast<std::size_t>(species) + 1)
    fail(join(path, "z0"), "needs M concentrations plus a temperature");
  if (n["x0_index"])
    r.x0_index = as_ivec(n["x0_index"], join(path, "x0_index"));
  else
    r.x0_index.assign(static_cast<std::size_t>(dim), 0);
  if (r.x0_index.size() != static_cast<std::size_t>(dim))
    fail(join(path, "x0_index"), "needs one index per axis");
  r.bump_radius = get_double(n, "bump_radius", path, r.bump_radius);
  if (!(r.bump_radius > 0.0))
    fail(join(path, "bump_radius"), "must be positive");
  if (n["conc_range"]) {
    const auto c = n["conc_range"];
    const std::string cpath = join(path, "conc_range");
    if (!c.IsSequence()) fail(cpath, "expected a list of [lo, hi]");
    r.conc_range.clear();
    for (std::size_t i = 0; i < c.size(); ++i)
      r.conc_range.push_back(as_range(c[i], at(cpath, i)));
  } else {
    r.conc_range.assign(static_cast<std::size_t>(species), {0.8, 1.2});
  }
  if (r.conc_range.size() != static_cast<std::size_t>(species))
    fail(join(path, "conc_range"), "needs one range per species");
  for (std::size_t i = 0; i < r.conc_range.size(); ++i)
    if (!(r.conc_range[i][0] < r.conc_range[i][1]))
      fail(at(join(path, "conc_range"), i), "needs lo < hi");
  if (n["temp_range"])
    r.temp_range = as_range(n["temp_range"], join(path, "temp_range"));
  if (!(r.temp_range[0] < r.temp_range[1]))
    fail(join(path, "temp_range"), "needs lo < hi");
  r.boundary_z_count = get_int(n, "boundary_z_count", path, r.boundary_z_count);
  r.boundary_x_count = get_int(n, "boundary_x_count", path, r.boundary_x_count);
  r.slice_count = get_int(n, "slice_count", path, r.slice_count);
  r.interior_count = get_int(n, "interior_count", path, r.interior_count);
  if (r.boundary_z_count < 1 || r.boundary_x_count < 1 || r.slice_count < 2 ||
      r.interior_count < 1)
    fail(path, "sample counts must be positive (slice_count at least 2)");
  if (n["probe"]) {
    r.probe = as_dvec(n["probe"], join(path, "probe"));
    if (r.probe.size() != static_cast<std::size_t>(dim))
      fail(join(path, "probe"), "needs one coordinate per axis");
  }
  return r;
}

FitSpec parse_fit(const YAML::Node& n, const std::string& path, int dim) {
  FitSpec f;
  if (!n) return f;
  check_map(n, path, {"data_n", "theta_init", "theta_box", "temp_range"});
  if (n["data_n"]) {
    f.data_n = as_ivec(n["data_n"], join(path, "data_n"));
    if (f.data_n.size() != static_cast<std::size_t>(dim))
      fail(join(path, "data_n"), "needs one node count per axis");
    for (std::size_t i = 0; i < f.data_n.size(); ++i)
      if (f.data_n[i] < 3)
        fail(at(join(path, "data_n"), i), "needs at least 3 nodes");
  }
  if (n["theta_init"])
    f.theta_init = as_dvec(n["theta_init"], join(path, "theta_init"));
  if (f.theta_init.empty()) fail(join(path, "theta_init"), "must not be empty");
  if (n["theta_box"]) {
    const auto b = n["theta_box"];
    const std::string bpath = join(path, "theta_box");
    if (!b.IsSequence()) fail(bpath, "expected a list of [lo, hi]");
    f.theta_box.clear();
    for (std::size_t i = 0; i < b.size(); ++i)
      f.theta_box.push_back(as_range(b[i], at(bpath, i)));
  }
  if (f.theta_box.size() != f.theta_init.size())
    fail(join(path, "theta_box"), "needs one [lo, hi] per parameter");
  for (std::size_t i = 0; i < f.theta_box.size(); ++i) {
    if (!(f.theta_box[i][0] < f.theta_box[i][1]))
      fail(at(join(path, "theta_box"), i), "needs lo < hi");
    if (f.theta_init[i] < f.theta_box[i][0] ||
        f.theta_init[i] > f.theta_box[i][1])
      fail(at(join(path, "theta_init"), i), "must lie inside theta_box");
  }
  if (n["temp_range"])
    f.temp_range = as_range(n["temp_range"], join(path, "temp_range"));
  if (!(f.temp_range[0] < f.temp_range[1]))
    fail(join(path, "temp_range"), "needs lo < hi");
  return f;
}

DemoBoundarySpec parse_demo_boundary(const YAML::Node& n,
                                     const std::string& path, int dim) {
  DemoBoundarySpec d;
  if (!n) return d;
  check_map(n, path, {"center", "radius", "amp"});
  if (n["center"]) {
    d.center = as_dvec(n["center"], join(path, "center"));
    if (d.center.size() != static_cast<std::size_t>(dim))
      fail(join(path, "center"), "needs one coordinate per axis");
  }
  d.radius = get_double(n, "radius", path, d.radius);
  if (!(d.radius > 0.0)) fail(join(path, "radius"), "must be positive");
  d.amp = get_double(n, "amp", path, d.amp);
  return d;
}

RefinementSpec parse_refinement(const YAML::Node& n, const std::string& path) {
  RefinementSpec r;
  if (!n) return r;
  check_map(n, path, {"n_list"});
  if (n["n_list"]) {
    r.n_list = as_ivec(n["n_list"], join(path, "n_list"));
    if (r.n_list.size() < 2) fail(join(path, "n_list"), "needs at least 2 sizes");
    for (std::size_t i = 0; i < r.n_list.size(); ++i) {
      if (r.n_list[i] < 3) fail(at(join(path, "n_list"), i), "needs at least 3");
      if (i > 0 && r.n_list[i] <= r.n_list[i - 1])
        fail(at(join(path, "n_list"), i), "must be strictly increasing");
    }
  }
  return r;
}

} // namespace

// ---------------------------------------------------------------------------
// Top level

RunConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  check_map(root, "",
            {"seed", "threads", "output", "grid", "model", "solver", "noise",
             "experiments", "probes", "linearisation", "reconstruct", "fit",
             "demo_boundary", "demo_source", "convergence"});

  RunConfig cfg;
  if (root["seed"]) cfg.seed = as_uint64(root["seed"], "seed");
  cfg.threads = get_int(root, "threads", "", cfg.threads);
  if (cfg.threads < 1) fail("threads", "must be at least 1");
  cfg.output = get_string(root, "output", "", cfg.output);
  if (cfg.output.empty()) fail("output", "must not be empty");
  cfg.grid = parse_grid(root["grid"], "grid");
  cfg.model = parse_model(root["model"], "model");
  cfg.solver = parse_solver(root["solver"], "solver");
  cfg.noise = parse_noise(root["noise"], "noise");
  cfg.experiments =
      parse_experiments(root["experiments"], "experiments", cfg.model.species);
  if (root["probes"]) {
    const auto p = root["probes"];
    if (!p.IsSequence()) fail("probes", "expected a list of points");
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto pt = as_dvec(p[i], at("probes", i));
      if (pt.size() != static_cast<std::size_t>(cfg.grid.dim))
        fail(at("probes", i), "needs one coordinate per axis");
      cfg.probes.push_back(std::move(pt));
    }
  }
  cfg.linearisation = parse_linearisation(root["linearisation"], "linearisation",
                                          cfg.model.species);
  cfg.reconstruct = parse_reconstruct(root["reconstruct"], "reconstruct",
                                      cfg.model.species, cfg.grid.dim);
  cfg.fit = parse_fit(root["fit"], "fit", cfg.grid.dim);
  cfg.demo_boundary =
      parse_demo_boundary(root["demo_boundary"], "demo_boundary", cfg.grid.dim);
  cfg.demo_source = parse_refinement(root["demo_source"], "demo_source");
  cfg.convergence = parse_refinement(root["convergence"], "convergence");

  // Surface construction errors now, with the config's field path.
  for (std::size_t i = 0; i < cfg.reconstruct.x0_index.size(); ++i) {
    const int idx = cfg.reconstruct.x0_index[i];
    if (idx < 0 || idx >= cfg.grid.n[i])
      fail(at("reconstruct.x0_index", i), "outside the grid");
  }
  try {
    const Grid g = build_grid_from(cfg.grid);
    try {
      (void)build_bundle(cfg.model, g);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Builders

Grid build_grid_from(const GridSpec& spec) {
  return build_grid(spec.dim, spec.n, spec.extent);
}

ModelBundle build_bundle(const ModelSpec& spec, const Grid& g) {
  ModelBundle b;
  b.species = spec.species;
  b.charge = spec.charge;
  b.lambda = spec.lambda;

  const PotentialSpec& p = spec.potential;
  if (p.kind == "affine") {
    b.potential = make_affine_potential(p.conc_coef, p.temp_coef, p.offset,
                                        {p.pos_coef[0], p.pos_coef[1],
                                         p.pos_coef[2]});
  } else if (p.kind == "affine_sin") {
    b.potential = make_affine_sin_potential(
        p.conc_coef, p.temp_coef, p.offset,
        {p.pos_coef[0], p.pos_coef[1], p.pos_coef[2]}, p.amp, p.freq);
  } else if (p.kind == "separable") {
    b.potential =
        make_separable_potential(p.temp_coef, p.conc_amp, p.pos_slope, p.offset);
  } else {
    b.potential = potential_from_expression(p.expr, spec.species,
                                            p.slope_lower_bound, p.partial_bound);
  }

  for (const auto& d : spec.diffusion) {
    if (d.kind == "constant") {
      b.diffusion.push_back(make_constant_diffusion(d.value));
    } else if (d.kind == "affine_temp") {
      b.diffusion.push_back(
          make_affine_temp_diffusion(d.base, d.slope, d.temp_range));
    } else if (d.kind == "sin_mix") {
      b.diffusion.push_back(
          make_sin_mix_diffusion(d.base, d.amp, d.conc_w, d.temp_w));
    } else if (d.kind == "position") {
      b.diffusion.push_back(make_position_diffusion(
          d.base, {d.grad[0], d.grad[1], d.grad[2]}, g));
    } else {
      b.diffusion.push_back(diffusion_from_expression(d.expr, spec.species,
                                                      d.lower, d.upper,
                                                      d.lipschitz));
    }
  }

  for (const auto& s : spec.source) {
    if (s.kind == "zero") {
      b.source.push_back(make_zero_source());
    } else if (s.kind == "bounded") {
      b.source.push_back(make_bounded_source(s.amp, s.freq));
    } else {
      b.source.push_back(source_from_expression(s.expr, spec.species, s.c0, s.c1));
    }
  }

  const PermittivitySpec& e = spec.permittivity;
  if (e.kind == "constant") {
    b.permittivity = make_constant_permittivity(e.value);
  } else if (e.kind == "affine") {
    b.permittivity =
        make_affine_permittivity(e.base, {e.grad[0], e.grad[1], e.grad[2]}, g);
  } else {
    b.permittivity = permittivity_from_expression(e.expr, e.lower);
  }

  b.check();
  return b;
}

std::function<double(const Point&)> boundary_expression(const std::string& expr) {
  const Expression e = Expression::parse(expr);
  if (e.species_used() > 0)
    throw std::invalid_argument("boundary data may only reference x1..x3");
  return [e](const Point& x) { return e.eval({}, 0.0, x); };
}

// ---------------------------------------------------------------------------
// Emission

namespace {

YAML::Node num(double v) { return YAML::Node(format_double(v)); }

YAML::Node dvec(const std::vector<double>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (double x : v) n.push_back(format_double(x));
  return n;
}

YAML::Node ivec(const std::vector<int>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (int x : v) n.push_back(x);
  return n;
}

YAML::Node range(const std::array<double, 2>& r) {
  YAML::Node n(YAML::NodeType::Sequence);
  n.push_back(format_double(r[0]));
  n.push_back(format_double(r[1]));
  return n;
}

YAML::Node ranges(const std::vector<std::array<double, 2>>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const auto& r : v) n.push_back(range(r));
  return n;
}

YAML::Node point3(const std::array<double, 3>& p) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (double x : p) n.push_back(format_double(x));
  return n;
}

YAML::Node emit_potential(const PotentialSpec& p) {
  YAML::Node n;
  n["kind"] = p.kind;
  if (p.kind == "affine" || p.kind == "affine_sin") {
    n["conc_coef"] = dvec(p.conc_coef);
    n["temp_coef"] = num(p.temp_coef);
    n["offset"] = num(p.offset);
    n["pos_coef"] = point3(p.pos_coef);
    if (p.kind == "affine_sin") {
      n["amp"] = num(p.amp);
      n["freq"] = num(p.freq);
    }
  } else if (p.kind == "separable") {
    n["temp_coef"] = num(p.temp_coef);
    n["conc_amp"] = num(p.conc_amp);
    n["pos_slope"] = num(p.pos_slope);
    n["offset"] = num(p.offset);
  } else {
    n["expr"] = p.expr;
    n["slope_lower_bound"] = num(p.slope_lower_bound);
    n["partial_bound"] = num(p.partial_bound);
  }
  return n;
}

YAML::Node emit_diffusion(const DiffusionSpec& d) {
  YAML::Node n;
  n["kind"] = d.kind;
  if (d.kind == "constant") {
    n["value"] = num(d.value);
  } else if (d.kind == "affine_temp") {
    n["base"] = num(d.base);
    n["slope"] = num(d.slope);
    n["temp_range"] = range(d.temp_range);
  } else if (d.kind == "sin_mix") {
    n["base"] = num(d.base);
    n["amp"] = num(d.amp);
    n["conc_w"] = num(d.conc_w);
    n["temp_w"] = num(d.temp_w);
  } else if (d.kind == "position") {
    n["base"] = num(d.base);
    n["grad"] = point3(d.grad);
  } else {
    n["expr"] = d.expr;
    n["lower"] = num(d.lower);
    n["upper"] = num(d.upper);
    n["lipschitz"] = num(d.lipschitz);
  }
  return n;
}

YAML::Node emit_source(const SourceSpec& s) {
  YAML::Node n;
  n["kind"] = s.kind;
  if (s.kind == "bounded") {
    n["amp"] = num(s.amp);
    n["freq"] = num(s.freq);
  } else if (s.kind == "expression") {
    n["expr"] = s.expr;
    n["c0"] = num(s.c0);
    n["c1"] = num(s.c1);
  }
  return n;
}

YAML::Node emit_permittivity(const PermittivitySpec& p) {
  YAML::Node n;
  n["kind"] = p.kind;
  if (p.kind == "constant") {
    n["value"] = num(p.value);
  } else if (p.kind == "affine") {
    n["base"] = num(p.base);
    n["grad"] = point3(p.grad);
  } else {
    n["expr"] = p.expr;
    n["lower"] = num(p.lower);
  }
  return n;
}

} // namespace

std::string emit_config(const RunConfig& cfg) {
  YAML::Node root;
  root["seed"] = cfg.seed;
  root["threads"] = cfg.threads;
  root["output"] = cfg.output;

  YAML::Node grid;
  grid["dim"] = cfg.grid.dim;
  grid["n"] = ivec(cfg.grid.n);
  std::vector<std::array<double, 2>> extent = cfg.grid.extent;
  if (extent.empty())
    extent.assign(static_cast<std::size_t>(cfg.grid.dim), {0.0, 1.0});
  grid["extent"] = ranges(extent);
  root["grid"] = grid;

  YAML::Node model;
  model["species"] = cfg.model.species;
  model["charge"] = dvec(cfg.model.charge);
  model["lambda"] = num(cfg.model.lambda);
  model["potential"] = emit_potential(cfg.model.potential);
  YAML::Node dl(YAML::NodeType::Sequence);
  for (const auto& d : cfg.model.diffusion) dl.push_back(emit_diffusion(d));
  model["diffusion"] = dl;
  YAML::Node sl(YAML::NodeType::Sequence);
  for (const auto& s : cfg.model.source) sl.push_back(emit_source(s));
  model["source"] = sl;
  model["permittivity"] = emit_permittivity(cfg.model.permittivity);
  root["model"] = model;

  YAML::Node solver;
  solver["max_outer_iterations"] = cfg.solver.max_outer_iterations;
  solver["fixed_point_tol"] = num(cfg.solver.fixed_point_tol);
  solver["damping"] = num(cfg.solver.damping);
  solver["linear_tol"] = num(cfg.solver.linear_tol);
  solver["inversion_tol"] = num(cfg.solver.inversion_tol);
  root["solver"] = solver;

  YAML::Node noise;
  noise["voltage_sd"] = num(cfg.noise.voltage_sd);
  noise["flux_sd"] = num(cfg.noise.flux_sd);
  noise["temp_sd"] = num(cfg.noise.temp_sd);
  root["noise"] = noise;

  YAML::Node exps(YAML::NodeType::Sequence);
  for (const auto& e : cfg.experiments) {
    YAML::Node en;
    YAML::Node gl(YAML::NodeType::Sequence);
    for (const auto& g : e.gamma) gl.push_back(g);
    en["gamma"] = gl;
    en["tau"] = e.tau;
    exps.push_back(en);
  }
  root["experiments"] = exps;

  YAML::Node probes(YAML::NodeType::Sequence);
  for (const auto& p : cfg.probes) probes.push_back(dvec(p));
  root["probes"] = probes;

  YAML::Node lin;
  lin["mu"] = dvec(cfg.linearisation.mu);
  lin["eta0"] = cfg.linearisation.eta0;
  YAML::Node fl(YAML::NodeType::Sequence);
  for (const auto& f : cfg.linearisation.f) fl.push_back(f);
  lin["f"] = fl;
  std::vector<double> t_list = cfg.linearisation.t_list;
  if (t_list.empty()) t_list = default_rate_t_list();
  lin["t_list"] = dvec(t_list);
  root["linearisation"] = lin;

  YAML::Node rec;
  rec["z0"] = dvec(cfg.reconstruct.z0);
  rec["x0_index"] = ivec(cfg.reconstruct.x0_index);
  rec["bump_radius"] = num(cfg.reconstruct.bump_radius);
  rec["conc_range"] = ranges(cfg.reconstruct.conc_range);
  rec["temp_range"] = range(cfg.reconstruct.temp_range);
  rec["boundary_z_count"] = cfg.reconstruct.boundary_z_count;
  rec["boundary_x_count"] = cfg.reconstruct.boundary_x_count;
  rec["slice_count"] = cfg.reconstruct.slice_count;
  rec["interior_count"] = cfg.reconstruct.interior_count;
  std::vector<double> probe = cfg.reconstruct.probe;
  if (probe.empty()) {
    for (const auto& ax : extent)
      probe.push_back(0.5 * (ax[0] + ax[1]));
  }
  rec["probe"] = dvec(probe);
  root["reconstruct"] = rec;

  YAML::Node fit;
  std::vector<int> data_n = cfg.fit.data_n;
  if (data_n.empty())
    for (int n : cfg.grid.n) data_n.push_back(2 * n - 1);
  fit["data_n"] = ivec(data_n);
  fit["theta_init"] = dvec(cfg.fit.theta_init);
  fit["theta_box"] = ranges(cfg.fit.theta_box);
  fit["temp_range"] = range(cfg.fit.temp_range);
  root["fit"] = fit;

  YAML::Node db;
  std::vector<double> center = cfg.demo_boundary.center;
  if (center.empty()) {
    for (const auto& ax : extent)
      center.push_back(0.5 * (ax[0] + ax[1]));
  }
  db["center"] = dvec(center);
  db["radius"] = num(cfg.demo_boundary.radius);
  db["amp"] = num(cfg.demo_boundary.amp);
  root["demo_boundary"] = db;

  YAML::Node ds;
  ds["n_list"] = ivec(cfg.demo_source.n_list);
  root["demo_source"] = ds;

  YAML::Node cv;
  cv["n_list"] = ivec(cfg.convergence.n_list);
  root["convergence"] = cv;

  std::ostringstream out;
  out << YAML::Dump(root) << "\n";
  return out.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = emit_config(cfg);
  return fnv1a(text);
}

} // namespace elcell
