#include <doctest.h>

#include <cmath>
#include <vector>

#include "elcell/measure.hpp"

using namespace elcell;

namespace {

constexpr double kPi = 3.14159265358979323846;

ModelBundle simple_bundle() {
  ModelBundle b;
  b.species = 1;
  b.charge = {1.0};
  b.potential = make_affine_potential({0.3}, 1.0, 0.0);
  b.diffusion = {make_constant_diffusion(1.0)};
  b.source = {make_zero_source()};
  b.permittivity = make_constant_permittivity(1.0);
  b.lambda = 0.5;
  return b;
}

Experiment wavy_experiment(const Grid& g) {
  Experiment e;
  e.gamma.assign(1, BoundaryField(g));
  e.tau = BoundaryField(g);
  for (std::size_t k = 0; k < e.tau.size(); ++k) {
    const Point p = g.position(g.boundary_ids()[k]);
    e.gamma[0][k] = 1.0 + 0.2 * std::sin(kPi * p[0]);
    e.tau[k] = 1.0 + 0.1 * p[1];
  }
  return e;
}

} // namespace

TEST_CASE("cauchy_record echoes data and reports vanishing constant-c flux") {
  const Grid g = build_grid(2, {17, 17});
  const ModelBundle b = simple_bundle();
  std::vector<BoundaryField> gamma{BoundaryField(g, 2.0)};
  BoundaryField tau(g);
  for (std::size_t k = 0; k < tau.size(); ++k)
    tau[k] = 1.0 + 0.2 * g.position(g.boundary_ids()[k])[0];
  const SystemState st = forward_solve(b, gamma, tau);

  const CauchyRecord full = cauchy_record(st, b, true);
  REQUIRE(full.flux.size() == 1);
  REQUIRE(full.temp_flux.has_value());
  CHECK(full.gamma[0].v == st.gamma[0].v);
  CHECK(full.tau.v == st.tau.v);
  for (std::size_t k = 0; k < full.flux[0].size(); ++k)
    CHECK(std::abs(full.flux[0][k]) <= 1e-7);

  const CauchyRecord reduced = cauchy_record(st, b, false);
  CHECK(!reduced.temp_flux.has_value());
}

TEST_CASE("interior_temperature interpolates the T field") {
  const Grid g = build_grid(2, {9, 9});
  const ModelBundle b = simple_bundle();
  const SystemState st =
      forward_solve(b, {BoundaryField(g, 1.0)}, BoundaryField(g, 1.5));
  const std::size_t node = g.index(4, 4);
  const auto vals =
      interior_temperature(st, {g.position(node), Point{0.31, 0.62, 0.0}});
  CHECK(vals[0] == doctest::Approx(st.T[node]).epsilon(1e-13));
  CHECK(vals[1] == doctest::Approx(interpolate(st.T, {0.31, 0.62, 0.0})));
}

TEST_CASE("GaussianStream is deterministic with sane moments") {
  GaussianStream a(123), b(123), c(456);
  double mean = 0.0, var = 0.0;
  const int n = 200000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) {
    draws[i] = a.next();
    mean += draws[i];
  }
  mean /= n;
  for (int i = 0; i < n; ++i) var += (draws[i] - mean) * (draws[i] - mean);
  var /= n;
  CHECK(std::abs(mean) <= 0.01);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));

  CHECK(b.next() == draws[0]);
  CHECK(b.next() == draws[1]);
  CHECK(c.next() != draws[0]);
}

TEST_CASE("laboratory measurements are deterministic given the seed") {
  const Grid g = build_grid(2, {9, 9});
  const NoiseSpec noise{1e-3, 1e-3, 1e-3};
  const Laboratory lab1(g, simple_bundle(), {}, noise, 42);
  const Laboratory lab2(g, simple_bundle(), {}, noise, 42);
  const Laboratory lab3(g, simple_bundle(), {}, noise, 43);
  const Experiment e = wavy_experiment(g);
  const auto& bids = g.boundary_ids();

  const auto v1 = lab1.voltage_between(e, bids[5], bids[0]);
  const auto v2 = lab2.voltage_between(e, bids[5], bids[0]);
  const auto v3 = lab3.voltage_between(e, bids[5], bids[0]);
  CHECK(v1.value == v2.value);
  CHECK(v1.noise_seed == v2.noise_seed);
  CHECK(v1.value != v3.value);

  // Same request on the same lab: identical noise, no second solve.
  const auto again = lab1.voltage_between(e, bids[5], bids[0]);
  CHECK(again.value == v1.value);
  CHECK(lab1.solves() == 1);
}

TEST_CASE("zero noise reproduces the direct measurement") {
  const Grid g = build_grid(2, {9, 9});
  const ModelBundle b = simple_bundle();
  const Laboratory lab(g, b, {}, NoiseSpec{}, 42);
  const Experiment e = wavy_experiment(g);

  const SystemState st = forward_solve(b, e.gamma, e.tau);
  const CauchyRecord direct = cauchy_record(st, b, true);
  const auto measured = lab.cauchy(e, true);
  CHECK(measured.value.flux[0].v == direct.flux[0].v);
  CHECK(measured.value.temp_flux->v == direct.temp_flux->v);

  const auto& bids = g.boundary_ids();
  const auto v = lab.voltage_between(e, bids[7], bids[2]);
  CHECK(v.value == doctest::Approx(voltage(st, bids[7], bids[2])).epsilon(1e-12));
}

TEST_CASE("noise perturbs at the configured scale") {
  const Grid g = build_grid(2, {9, 9});
  const ModelBundle b = simple_bundle();
  const Laboratory clean(g, b, {}, NoiseSpec{}, 42);
  const Laboratory noisy(g, b, {}, NoiseSpec{1e-3, 0.0, 0.0}, 42);
  const Experiment e = wavy_experiment(g);
  const auto& bids = g.boundary_ids();
  const auto vc = clean.voltage_between(e, bids[5], bids[0]);
  const auto vn = noisy.voltage_between(e, bids[5], bids[0]);
  CHECK(vn.value != vc.value);
  CHECK(std::abs(vn.value - vc.value) <= 6e-3);
}

TEST_CASE("boundary_voltages pins the reference node to zero") {
  const Grid g = build_grid(2, {9, 9});
  const Laboratory lab(g, simple_bundle(), {}, NoiseSpec{}, 0);
  const Experiment e = wavy_experiment(g);
  const auto& bids = g.boundary_ids();
  const std::size_t ref = bids[4];
  const auto bv = lab.boundary_voltages(e, ref);
  CHECK(bv.value[g.boundary_ordinal(ref)] == 0.0);
  for (std::size_t k : {std::size_t(0), std::size_t(9), std::size_t(20)}) {
    const auto direct = lab.voltage_between(e, bids[k], ref);
    CHECK(bv.value[k] == doctest::Approx(direct.value).epsilon(1e-13));
  }
}

TEST_CASE("probe_temperatures reads the hidden T field at the probes") {
  const Grid g = build_grid(2, {9, 9});
  const ModelBundle b = simple_bundle();
  const Laboratory lab(g, b, {}, NoiseSpec{}, 0);
  const Experiment e = wavy_experiment(g);
  const SystemState st = forward_solve(b, e.gamma, e.tau);
  const Point probe = g.position(g.index(3, 5));
  const auto got = lab.probe_temperatures(e, {probe});
  CHECK(got.value[0] == doctest::Approx(st.T[g.index(3, 5)]).epsilon(1e-12));
}

TEST_CASE("make_probe_data hits the requested values at both nodes") {
  const Grid g = build_grid(2, {17, 17});
  const auto& bids = g.boundary_ids();
  const std::size_t node = bids[10];
  const std::size_t ref = bids[40];
  const std::vector<double> vals{1.4, 0.9};
  const std::vector<double> refs{1.0, 1.1};
  const Experiment e = make_probe_data(g, node, ref, vals, refs, 0.3);
  REQUIRE(e.gamma.size() == 1);
  CHECK(e.gamma[0].at_node(node) == doctest::Approx(1.4).epsilon(1e-12));
  CHECK(e.gamma[0].at_node(ref) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.tau.at_node(node) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(e.tau.at_node(ref) == doctest::Approx(1.1).epsilon(1e-12));

  // Far from both bumps the data sits at the reference background.
  std::size_t far = bids[0];
  double best = -1.0;
  for (auto id : bids) {
    const Point p = g.position(id);
    const Point a = g.position(node);
    const Point r = g.position(ref);
    const double da = std::hypot(p[0] - a[0], p[1] - a[1]);
    const double dr = std::hypot(p[0] - r[0], p[1] - r[1]);
    if (std::min(da, dr) > best) {
      best = std::min(da, dr);
      far = id;
    }
  }
  REQUIRE(best > 0.3);
  CHECK(e.gamma[0].at_node(far) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e.tau.at_node(far) == doctest::Approx(1.1).epsilon(1e-12));
}

TEST_CASE("linearised_dn is linear in the data") {
  const Grid g = build_grid(2, {17, 17});
  ModelBundle b = simple_bundle();
  b.diffusion = {make_sin_mix_diffusion(1.5, 0.4, 1.0, 1.0)};
  const std::vector<double> mu{1.0};
  const BoundaryField eta0(g, 1.3);
  BoundaryField f1(g), f2(g);
  for (std::size_t k = 0; k < f1.size(); ++k) {
    const Point p = g.position(g.boundary_ids()[k]);
    f1[k] = std::sin(kPi * p[0]);
    f2[k] = p[1] * (1.0 - p[1]);
  }
  BoundaryField fsum(g);
  for (std::size_t k = 0; k < fsum.size(); ++k) fsum[k] = f1[k] + 2.0 * f2[k];

  const auto d1 = linearised_dn(b, mu, eta0, {f1}, 1e-12);
  const auto d2 = linearised_dn(b, mu, eta0, {f2}, 1e-12);
  const auto ds = linearised_dn(b, mu, eta0, {fsum}, 1e-12);
  for (std::size_t k = 0; k < ds[0].size(); ++k)
    CHECK(ds[0][k] ==
          doctest::Approx(d1[0][k] + 2.0 * d2[0][k]).epsilon(5e-9));
}

TEST_CASE("state-dependent diffusion shows a first-order linearisation rate") {
  const Grid g = build_grid(2, {17, 17});
  ModelBundle b = simple_bundle();
  b.diffusion = {make_sin_mix_diffusion(1.5, 0.4, 1.0, 1.0)};
  const std::vector<double> mu{1.0};
  const BoundaryField eta0(g, 1.3);
  BoundaryField f(g);
  for (std::size_t k = 0; k < f.size(); ++k)
    f[k] = 0.2 * std::sin(kPi * g.position(g.boundary_ids()[k])[0]);

  const RateReport rep =
      linearisation_rate(b, g, mu, eta0, {f}, default_rate_t_list());
  REQUIRE(rep.fit_points >= 3);
  CHECK(rep.slope >= 0.8);
  // Errors decrease with t over the fitted tail.
  const std::size_t n = rep.error.size();
  CHECK(rep.error[n - 1] < rep.error[n - 4]);
}

TEST_CASE("state-independent diffusion is exactly linear") {
  const Grid g = build_grid(2, {17, 17});
  ModelBundle b = simple_bundle();
  b.diffusion = {make_position_diffusion(1.2, {0.3, 0.1, 0.0}, g)};
  const std::vector<double> mu{1.0};
  const BoundaryField eta0(g, 1.3);
  BoundaryField f(g);
  for (std::size_t k = 0; k < f.size(); ++k)
    f[k] = 0.2 * std::sin(kPi * g.position(g.boundary_ids()[k])[0]);

  PicardOptions opts;
  opts.fixed_point_tol = 1e-11;
  opts.linear_tol = 1e-12;
  const RateReport rep =
      linearisation_rate(b, g, mu, eta0, {f}, default_rate_t_list(), opts);
  for (std::size_t k = 0; k < rep.error.size(); ++k) {
    CHECK(rep.converged[k]);
    CHECK(rep.error[k] <= 1e-8);
  }
}

TEST_CASE("default_rate_t_list is the halving ladder") {
  const auto t = default_rate_t_list();
  REQUIRE(t.size() == 8);
  CHECK(t.front() == 0.5);
  CHECK(t.back() == doctest::Approx(1.0 / 256.0));
  for (std::size_t i = 1; i < t.size(); ++i)
    CHECK(t[i] == doctest::Approx(0.5 * t[i - 1]));
}
