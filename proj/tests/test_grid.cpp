#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "elcell/grid.hpp"

using namespace elcell;

TEST_CASE("build_grid validates its arguments") {
  CHECK_THROWS_AS(build_grid(4, {5, 5, 5}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(0, {5}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2, {5}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2, {5, 2}), std::invalid_argument);
  CHECK_THROWS_AS(build_grid(2, {5, 5}, {{0.0, 1.0}, {1.0, 1.0}}),
                  std::invalid_argument);
}

TEST_CASE("node partition and counts on a 5x5 grid") {
  const Grid g = build_grid(2, {5, 5});
  CHECK(g.node_count() == 25);
  CHECK(g.boundary_count() == 16);
  CHECK(g.interior_count() == 9);

  std::set<std::size_t> all;
  for (auto id : g.boundary_ids()) {
    CHECK(g.is_boundary(id));
    all.insert(id);
  }
  for (auto id : g.interior_ids()) {
    CHECK(!g.is_boundary(id));
    all.insert(id);
  }
  CHECK(all.size() == 25);
}

TEST_CASE("index and unpack are inverse on a 3-d grid") {
  const Grid g = build_grid(3, {3, 4, 5});
  for (std::size_t id = 0; id < g.node_count(); ++id) {
    const auto idx = g.unpack(id);
    CHECK(g.index(idx[0], idx[1], idx[2]) == id);
  }
}

TEST_CASE("positions follow the uniform spacing") {
  const Grid g = build_grid(2, {5, 9}, {{0.0, 1.0}, {-1.0, 1.0}});
  CHECK(g.spacing(0) == doctest::Approx(0.25));
  CHECK(g.spacing(1) == doctest::Approx(0.25));
  const Point p = g.position(g.index(2, 3));
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(-0.25));
  CHECK(p[2] == 0.0);
}

TEST_CASE("corner nodes are owned by the first extremal axis") {
  const Grid g = build_grid(2, {5, 5});
  const std::size_t corner = g.index(0, 0);
  CHECK(g.face_axis(corner) == 0);
  CHECK(g.face_side(corner) == -1);
  const Point n = g.normal(corner);
  CHECK(n[0] == -1.0);
  CHECK(n[1] == 0.0);

  const std::size_t high_corner = g.index(4, 4);
  CHECK(g.face_axis(high_corner) == 0);
  CHECK(g.face_side(high_corner) == +1);

  // A node extremal only in y belongs to the y face.
  const std::size_t side = g.index(2, 0);
  CHECK(g.face_axis(side) == 1);
  CHECK(g.normal(side)[1] == -1.0);
}

TEST_CASE("boundary ordinal is a dense renumbering") {
  const Grid g = build_grid(2, {4, 6});
  const auto& bids = g.boundary_ids();
  for (std::size_t b = 0; b < bids.size(); ++b)
    CHECK(g.boundary_ordinal(bids[b]) == b);
}

TEST_CASE("gradient is exact on quadratics, including the one-sided ends") {
  const Grid g = build_grid(2, {5, 5});
  ScalarField u(g);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const Point p = g.position(i);
    u[i] = p[0] * p[0];
  }
  const VectorField grad = gradient(u);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const Point p = g.position(i);
    CHECK(grad.comp[0][i] == doctest::Approx(2.0 * p[0]).epsilon(1e-13));
    CHECK(grad.comp[1][i] == doctest::Approx(0.0).epsilon(1e-13));
  }
}

TEST_CASE("normal_trace projects onto the owning face normal") {
  const Grid g = build_grid(2, {5, 5});
  ScalarField u(g);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = g.position(i)[0];
  const BoundaryField tr = normal_trace(gradient(u));
  for (std::size_t b = 0; b < g.boundary_count(); ++b) {
    const std::size_t id = g.boundary_ids()[b];
    if (g.face_axis(id) == 0) {
      CHECK(tr[b] == doctest::Approx(g.face_side(id)).epsilon(1e-13));
    } else {
      CHECK(tr[b] == doctest::Approx(0.0).epsilon(1e-13));
    }
  }
}

TEST_CASE("interpolate is exact for multilinear fields") {
  const Grid g = build_grid(2, {9, 9});
  ScalarField u(g);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const Point p = g.position(i);
    u[i] = 1.0 + 2.0 * p[0] + 3.0 * p[1] + 4.0 * p[0] * p[1];
  }
  for (const Point q : {Point{0.3, 0.7, 0.0}, Point{0.0, 0.0, 0.0},
                        Point{1.0, 0.55, 0.0}}) {
    const double want = 1.0 + 2.0 * q[0] + 3.0 * q[1] + 4.0 * q[0] * q[1];
    CHECK(interpolate(u, q) == doctest::Approx(want).epsilon(1e-13));
  }
  CHECK_THROWS_AS(interpolate(u, Point{1.5, 0.5, 0.0}), std::domain_error);
}

TEST_CASE("interpolate reproduces nodal values exactly") {
  const Grid g = build_grid(3, {3, 4, 3});
  ScalarField u(g);
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = std::sin(static_cast<double>(i));
  for (std::size_t i = 0; i < u.size(); ++i)
    CHECK(interpolate(u, g.position(i)) == doctest::Approx(u[i]).epsilon(1e-14));
}

TEST_CASE("quadrature weights integrate constants to the box measures") {
  const Grid g = build_grid(2, {9, 17}, {{0.0, 2.0}, {0.0, 1.0}});
  double vol = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) vol += g.volume_weight(i);
  CHECK(vol == doctest::Approx(2.0).epsilon(1e-12));

  double per = 0.0;
  for (auto id : g.boundary_ids()) per += g.boundary_weight(id);
  CHECK(per == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("weighted norms and pairings on constants") {
  const Grid g = build_grid(2, {9, 9});
  const ScalarField u(g, 2.0);
  CHECK(volume_norm(u) == doctest::Approx(2.0).epsilon(1e-12));
  const BoundaryField f(g, 3.0);
  const BoundaryField h(g, 0.5);
  CHECK(boundary_norm(f) == doctest::Approx(3.0 * 2.0).epsilon(1e-12));
  CHECK(boundary_pairing(f, h) == doctest::Approx(3.0 * 0.5 * 4.0).epsilon(1e-12));
}

TEST_CASE("at_node maps boundary ids to stored entries") {
  const Grid g = build_grid(2, {5, 5});
  BoundaryField f(g);
  for (std::size_t b = 0; b < f.size(); ++b) f[b] = static_cast<double>(b);
  for (std::size_t b = 0; b < f.size(); ++b)
    CHECK(f.at_node(g.boundary_ids()[b]) == static_cast<double>(b));
}

TEST_CASE("contains accepts the closed box and rejects outside points") {
  const Grid g = build_grid(2, {5, 5}, {{0.0, 1.0}, {0.0, 2.0}});
  CHECK(g.contains(Point{0.0, 0.0, 0.0}));
  CHECK(g.contains(Point{1.0, 2.0, 0.0}));
  CHECK(!g.contains(Point{1.1, 0.5, 0.0}));
  CHECK(!g.contains(Point{0.5, -0.2, 0.0}));
}
