#include <doctest.h>

#include <cmath>
#include <vector>

#include "elcell/inverse.hpp"
#include "elcell/util.hpp"

using namespace elcell;

namespace {

constexpr double kPi = 3.14159265358979323846;

// One-species bundle whose potential is affine in every argument, so every
// reconstruction step should be exact up to solver tolerances.
ModelBundle affine_bundle(Point pos_coef = {0.0, 0.0, 0.0}) {
  ModelBundle b;
  b.species = 1;
  b.charge = {1.0};
  b.potential = make_affine_potential({0.3}, 1.0, 0.3, pos_coef);
  b.diffusion = {make_constant_diffusion(1.0)};
  b.source = {make_zero_source()};
  b.permittivity = make_constant_permittivity(1.0);
  b.lambda = 0.5;
  return b;
}

} // namespace

TEST_CASE("monotone cubic interpolates the nodes and stays monotone") {
  const std::vector<double> x{0.0, 0.5, 1.2, 2.0, 2.2};
  const std::vector<double> y{0.0, 0.1, 1.0, 1.05, 2.0};
  const MonotoneCubic m(x, y);
  for (std::size_t k = 0; k < x.size(); ++k)
    CHECK(m.eval(x[k]) == doctest::Approx(y[k]).epsilon(1e-14));
  CHECK(m.front() == 0.0);
  CHECK(m.back() == 2.2);
  CHECK(m.y_front() == 0.0);
  CHECK(m.y_back() == 2.0);

  // No overshoot: values stay inside the bracketing ordinates and the
  // derivative never turns negative.
  for (int j = 0; j <= 1000; ++j) {
    const double t = 2.2 * j / 1000.0;
    const double v = m.eval(t);
    CHECK(v >= -1e-14);
    CHECK(v <= 2.0 + 1e-14);
    CHECK(m.derivative(t) >= -1e-12);
  }
  for (int j = 1; j < 100; ++j) {
    const double t = 0.5 + (1.2 - 0.5) * j / 100.0;
    CHECK(m.eval(t) >= 0.1 - 1e-14);
    CHECK(m.eval(t) <= 1.0 + 1e-14);
  }
  CHECK_THROWS_AS(m.eval(-0.1), std::domain_error);
  CHECK_THROWS_AS(m.eval(2.3), std::domain_error);
}

TEST_CASE("monotone cubic reproduces affine data exactly") {
  const std::vector<double> x{0.0, 0.3, 1.0, 1.7};
  std::vector<double> y(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = 2.0 + 3.0 * x[k];
  const MonotoneCubic m(x, y);
  for (int j = 0; j <= 50; ++j) {
    const double t = 1.7 * j / 50.0;
    CHECK(m.eval(t) == doctest::Approx(2.0 + 3.0 * t).epsilon(1e-13));
    CHECK(m.derivative(t) == doctest::Approx(3.0).epsilon(1e-11));
  }
}

TEST_CASE("monotone cubic inversion round-trips") {
  const std::vector<double> x{0.0, 0.4, 1.0, 1.5, 2.0};
  const std::vector<double> y{-1.0, -0.2, 0.3, 1.4, 2.0};
  const MonotoneCubic m(x, y);
  for (int j = 0; j <= 40; ++j) {
    const double t = 2.0 * j / 40.0;
    const auto back = m.try_invert(m.eval(t));
    REQUIRE(back.has_value());
    CHECK(*back == doctest::Approx(t).epsilon(1e-10));
  }
  CHECK(!m.try_invert(-1.5).has_value());
  CHECK(!m.try_invert(2.5).has_value());
  CHECK(*m.try_invert(-1.0) == 0.0);
  CHECK(*m.try_invert(2.0) == 2.0);

  const MonotoneCubic flat({0.0, 1.0, 2.0}, {0.0, 1.0, 0.5});
  CHECK_THROWS_AS(flat.try_invert(0.25), NumericalError);
}

TEST_CASE("reconstruction table rejects duplicates and tracks flags") {
  ReconstructionTable t({1.0, 1.0}, Point{0.0, 0.0, 0.0});
  TableEntry a;
  a.p = {1.0};
  a.key = 0.9;
  a.x = Point{0.5, 0.0, 0.0};
  a.value = 0.25;
  t.add(a);
  CHECK_THROWS_AS(t.add(a), std::invalid_argument);

  TableEntry other = a;
  other.key = 1.1;
  t.add(other);

  TableEntry bad = a;
  bad.key = 1.3;
  bad.value = std::nan("");
  CHECK_THROWS_AS(t.add(bad), std::invalid_argument);
  bad.ok = false;
  bad.note = "left flagged on purpose";
  bad.value = 0.0;
  t.add(bad);

  CHECK(t.entries().size() == 3);
  CHECK(t.ok_count() == 2);

  ReconstructionTable same_ref({1.0, 1.0}, Point{0.0, 0.0, 0.0});
  TableEntry c = a;
  c.key = 2.0;
  same_ref.add(c);
  t.merge(same_ref);
  CHECK(t.entries().size() == 4);

  ReconstructionTable wrong_ref({2.0, 1.0}, Point{0.0, 0.0, 0.0});
  CHECK_THROWS_AS(t.merge(wrong_ref), std::invalid_argument);
}

TEST_CASE("offset statistics see through a constant gauge shift") {
  ReconstructionTable t({1.0}, Point{0.0, 0.0, 0.0});
  for (int k = 0; k < 5; ++k) {
    TableEntry e;
    e.p = {1.0 + 0.1 * k};
    e.key = 0.9;
    e.value = 2.0 * e.p[0] + 7.0;  // truth 2 p plus a constant offset
    t.add(e);
  }
  const auto st = offset_statistics(
      t, [](const std::vector<double>& p, double, const Point&) {
        return 2.0 * p[0];
      });
  CHECK(st.count == 5);
  CHECK(st.mean == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(st.stddev <= 1e-12);
}

TEST_CASE("boundary reconstruction is exact for an affine potential") {
  const Grid g = build_grid(2, {17, 17});
  const ModelBundle hidden = affine_bundle();
  const Laboratory lab(g, hidden, {}, NoiseSpec{}, 1);

  ReferenceSpec ref;
  ref.z0 = {1.0, 1.0};
  ref.x0_node = g.index(0, 0);

  const std::vector<std::vector<double>> z_samples{
      {0.8, 0.9}, {1.2, 1.1}, {1.0, 1.3}};
  const std::vector<std::size_t> x_nodes{
      g.index(8, 0), g.index(0, 8), g.index(16, 8), ref.x0_node};

  const ReconstructionTable table =
      reconstruct_phi_boundary(lab, z_samples, x_nodes, ref, 0.3);
  CHECK(table.entries().size() == z_samples.size() * x_nodes.size());

  // Samples landing on the reference node are flagged, not fabricated.
  std::size_t flagged = 0;
  for (const auto& e : table.entries())
    if (!e.ok) {
      ++flagged;
      CHECK(e.note.find("reference") != std::string::npos);
    }
  CHECK(flagged == z_samples.size());
  CHECK(table.ok_count() == table.entries().size() - flagged);

  // Offsets against the raw potential are one constant: minus phi(z0, x0).
  const auto st = offset_statistics(
      table, [](const std::vector<double>& p, double key, const Point&) {
        return 0.3 * p[0] + key + 0.3;
      });
  CHECK(st.count == table.ok_count());
  CHECK(st.mean == doctest::Approx(-1.6).epsilon(1e-7));
  CHECK(st.stddev <= 1e-8);
}

TEST_CASE("multithreaded boundary reconstruction matches single-threaded") {
  const Grid g = build_grid(2, {9, 9});
  const Laboratory lab1(g, affine_bundle(), {}, NoiseSpec{}, 1);
  const Laboratory lab4(g, affine_bundle(), {}, NoiseSpec{}, 1);
  ReferenceSpec ref;
  ref.z0 = {1.0, 1.0};
  ref.x0_node = g.index(0, 0);
  const std::vector<std::vector<double>> z{{0.8, 0.9}, {1.2, 1.1}};
  const std::vector<std::size_t> xs{g.index(4, 0), g.index(0, 4), g.index(8, 4)};
  const auto t1 = reconstruct_phi_boundary(lab1, z, xs, ref, 0.3, 1);
  const auto t4 = reconstruct_phi_boundary(lab4, z, xs, ref, 0.3, 4);
  REQUIRE(t1.entries().size() == t4.entries().size());
  for (std::size_t k = 0; k < t1.entries().size(); ++k)
    CHECK(t1.entries()[k].value == t4.entries()[k].value);
}

TEST_CASE("boundary slice reconstructs the temperature profile") {
  const Grid g = build_grid(2, {17, 17});
  const Laboratory lab(g, affine_bundle(), {}, NoiseSpec{}, 1);
  ReferenceSpec ref;
  ref.z0 = {1.0, 1.0};
  ref.x0_node = g.index(0, 0);

  const BoundaryPotentialSlice slice =
      reconstruct_boundary_slice(lab, {1.0}, 0.8, 1.2, 5, ref, 0.3);
  CHECK(slice.t_samples().size() == 5);
  CHECK(slice.min_slope() == doctest::Approx(1.0).epsilon(1e-6));

  // Hidden truth: phi_hat(t, x) = t - 1 at every boundary node.
  for (std::size_t b : {std::size_t(0), std::size_t(20), std::size_t(50)}) {
    CHECK(slice.phi_hat(0.95, b) == doctest::Approx(-0.05).epsilon(1e-7));
    CHECK(slice.phi_hat(1.2, b) == doctest::Approx(0.2).epsilon(1e-7));
    const auto t = slice.try_invert(0.1, b);
    REQUIRE(t.has_value());
    CHECK(*t == doctest::Approx(1.1).epsilon(1e-8));
  }

  const auto tau = slice.invert_all(0.05);
  REQUIRE(tau.has_value());
  for (std::size_t b = 0; b < tau->size(); ++b)
    CHECK(slice.phi_hat((*tau)[b], b) == doctest::Approx(0.05).epsilon(1e-9));

  std::size_t blocking = g.node_count();
  CHECK(!slice.invert_all(0.5, &blocking).has_value());
  CHECK(g.is_boundary(blocking));
}

TEST_CASE("interior reconstruction steers and reads back consistently") {
  const Grid g = build_grid(2, {17, 17});
  const Laboratory lab(g, affine_bundle(), {}, NoiseSpec{}, 1);
  ReferenceSpec ref;
  ref.z0 = {1.0, 1.0};
  ref.x0_node = g.index(0, 0);
  const BoundaryPotentialSlice slice =
      reconstruct_boundary_slice(lab, {1.0}, 0.8, 1.2, 7, ref, 0.3);

  const Point y{0.5, 0.5, 0.0};
  const std::vector<double> s{-0.1, -0.05, 0.0, 0.05, 0.1, 0.19};
  const InteriorResult res = reconstruct_phi_interior(lab, slice, s, y, ref);

  // The last target needs a boundary value outside the sampled range.
  REQUIRE(res.skipped_s.size() == 1);
  CHECK(res.skipped_s[0] == 0.19);
  CHECK(res.table.entries().size() == 5);
  CHECK(res.table.ok_count() == 5);

  // omega0 at the centre of the unit square for a unit charge density.
  CHECK(res.omega0_at_probe == doctest::Approx(-0.0736713).epsilon(0.01));

  for (const auto& e : res.table.entries()) {
    CHECK(e.provenance == Provenance::interior_temperature);
    CHECK(e.x == y);
  }
  const auto st = offset_statistics(
      res.table, [](const std::vector<double>& p, double key, const Point&) {
        return 0.3 * p[0] + key + 0.3;
      });
  CHECK(st.mean == doctest::Approx(-1.6).epsilon(1e-5));
  CHECK(st.stddev <= 1e-6);
}

TEST_CASE("boundary gradients recover affine coefficients") {
  const Grid g = build_grid(2, {17, 17});
  const Point d{0.2, -0.15, 0.0};
  const Laboratory lab(g, affine_bundle(d), {}, NoiseSpec{}, 1);
  ReferenceSpec ref;
  ref.z0 = {1.0, 1.0};
  ref.x0_node = g.index(16, 16);

  // Mid-face node: both differences are centred.
  const std::size_t mid = g.index(8, 0);
  const BoundaryGradients gm =
      reconstruct_phi_gradients_boundary(lab, {1.1, 0.95}, mid, ref, 0.3);
  REQUIRE(gm.state_partial.size() == 2);
  CHECK(gm.state_partial[0] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(gm.state_partial[1] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(gm.tangential[0] == doctest::Approx(0.2).epsilon(1e-5));
  CHECK(!gm.one_sided[0]);
  CHECK(!gm.one_sided[1]);
  CHECK(gm.delta == 1e-3);

  // Corner node: the tangential difference must fall back to one-sided.
  const std::size_t corner = g.index(0, 0);
  const BoundaryGradients gc =
      reconstruct_phi_gradients_boundary(lab, {1.0, 1.0}, corner, ref, 0.3);
  const int face = g.face_axis(corner);
  const int tang = face == 0 ? 1 : 0;
  CHECK(gc.one_sided[static_cast<std::size_t>(tang)]);
  CHECK(gc.tangential[tang] == doctest::Approx(d[tang]).epsilon(1e-5));

  CHECK_THROWS_AS(reconstruct_phi_gradients_boundary(lab, {1.0, 1.0},
                                                     ref.x0_node, ref, 0.3),
                  std::invalid_argument);
}

TEST_CASE("normal position gradient is recovered from constant data") {
  const Grid g = build_grid(2, {17, 17});
  const Point d{0.2, -0.15, 0.0};
  const Laboratory lab(g, affine_bundle(d), {}, NoiseSpec{}, 1);

  // Bottom mid-face node, outward normal (0, -1): expect -d[1].
  const double got = recover_normal_x_gradient(lab, {1.0, 1.0}, g.index(8, 0), 1.0);
  CHECK(got == doctest::Approx(0.15).epsilon(1e-4));

  // Left mid-face node, outward normal (-1, 0): expect -d[0].
  const double left = recover_normal_x_gradient(lab, {1.0, 1.0}, g.index(0, 8), 1.0);
  CHECK(left == doctest::Approx(-0.2).epsilon(1e-4));

  // A slope estimate below half the ellipticity constant is rejected.
  CHECK_THROWS_AS(
      recover_normal_x_gradient(lab, {1.0, 1.0}, g.index(8, 0), 0.1),
      NumericalError);
}

TEST_CASE("realize samples recipe closures on the boundary") {
  const Grid g = build_grid(2, {9, 9});
  DataRecipe r;
  r.gamma = {[](const Point& p) { return 1.0 + 0.2 * std::sin(kPi * p[0]); }};
  r.tau = [](const Point& p) { return 1.0 + 0.2 * p[1]; };
  const Experiment e = realize(r, g);
  REQUIRE(e.gamma.size() == 1);
  for (std::size_t k = 0; k < e.tau.size(); ++k) {
    const Point p = g.position(g.boundary_ids()[k]);
    CHECK(e.gamma[0][k] == doctest::Approx(1.0 + 0.2 * std::sin(kPi * p[0])));
    CHECK(e.tau[k] == doctest::Approx(1.0 + 0.2 * p[1]));
  }

  DataRecipe broken;
  broken.gamma = {[](const Point&) { return 1.0; }};
  CHECK_THROWS_AS(realize(broken, g), std::invalid_argument);
}

TEST_CASE("diffusion fit recovers the hidden parameters on the same grid") {
  const Grid g = build_grid(2, {17, 17});
  const std::array<double, 2> family_range{0.5, 2.0};

  ModelBundle hidden = affine_bundle();
  hidden.diffusion = {make_affine_temp_diffusion(1.0, 0.3, family_range)};
  const Laboratory lab(g, hidden, {}, NoiseSpec{}, 3);

  std::vector<DataRecipe> recipes(2);
  recipes[0].gamma = {
      [](const Point& p) { return 1.0 + 0.2 * std::sin(kPi * p[0]); }};
  recipes[0].tau = [](const Point& p) { return 1.0 + 0.2 * p[1]; };
  recipes[1].gamma = {[](const Point& p) { return 1.0 + 0.15 * p[1]; }};
  recipes[1].tau = [](const Point& p) { return 1.2 - 0.2 * p[0]; };

  DiffusionFitProblem prob;
  prob.theta_init = {0.8, 0.1};
  prob.theta_box = {{0.5, 2.0}, {0.0, 0.6}};
  prob.data = measure_flux_dataset(lab, recipes);
  prob.fit_grid = &g;
  prob.make_bundle = [&](const std::vector<double>& th) {
    ModelBundle b = affine_bundle();
    b.diffusion = {make_affine_temp_diffusion(th[0], th[1], family_range)};
    return b;
  };

  const auto [theta, report] = fit_diffusion(prob);
  REQUIRE(theta.size() == 2);
  CHECK(std::abs(theta[0] - 1.0) <= 1e-3);
  CHECK(std::abs(theta[1] - 0.3) <= 1e-3);
  CHECK(report.converged);
  CHECK(report.iterations <= 25);
  CHECK(report.final_loss <= 1e-10);
  REQUIRE(!report.trace.empty());
  for (std::size_t k = 1; k < report.trace.size(); ++k)
    CHECK(report.trace[k].loss <= report.trace[k - 1].loss + 1e-15);
  CHECK(report.jacobian_condition >= 1.0);
}

TEST_CASE("constant data leaves the fit unidentifiable") {
  const Grid g = build_grid(2, {17, 17});
  ModelBundle hidden = affine_bundle();
  hidden.diffusion = {make_affine_temp_diffusion(1.0, 0.3, {0.5, 2.0})};
  const Laboratory lab(g, hidden, {}, NoiseSpec{}, 3);

  std::vector<DataRecipe> recipes(1);
  recipes[0].gamma = {[](const Point&) { return 1.0; }};
  recipes[0].tau = [](const Point& p) { return 1.0 + 0.2 * p[1]; };

  DiffusionFitProblem prob;
  prob.theta_init = {0.8, 0.1};
  prob.theta_box = {{0.5, 2.0}, {0.0, 0.6}};
  prob.data = measure_flux_dataset(lab, recipes);
  prob.fit_grid = &g;
  prob.make_bundle = [&](const std::vector<double>& th) {
    ModelBundle b = affine_bundle();
    b.diffusion = {make_affine_temp_diffusion(th[0], th[1], {0.5, 2.0})};
    return b;
  };

  try {
    fit_diffusion(prob);
    FAIL("expected a NumericalError about identifiability");
  } catch (const NumericalError& err) {
    CHECK(std::string(err.what()).find("identifiable") != std::string::npos);
  }
}
