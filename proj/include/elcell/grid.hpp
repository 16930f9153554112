#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <vector>

namespace elcell {

// Spatial point. The z component stays zero on 2-d grids.
using Point = std::array<double, 3>;

/// Axis-aligned box grid with uniform spacing per axis.
///
/// Nodes are numbered x-fastest: id = i + nx*(j + ny*k). Boundary nodes are
/// the ones with an extremal index on some axis; corner and edge nodes are
/// assigned to exactly one face, first extremal axis wins (x, then y, then z),
/// so the outward normal is single valued. Immutable after construction and
/// safe to share across threads.
class Grid {
 public:
  Grid(int dim, const std::vector<int>& n,
       const std::vector<std::array<double, 2>>& extent);

  int dim() const { return dim_; }
  int nodes_along(int axis) const { return n_[axis]; }
  std::size_t node_count() const { return node_count_; }
  std::size_t boundary_count() const { return boundary_ids_.size(); }
  std::size_t interior_count() const { return interior_ids_.size(); }

  double spacing(int axis) const { return h_[axis]; }
  double lo(int axis) const { return ext_[axis][0]; }
  double hi(int axis) const { return ext_[axis][1]; }
  double length(int axis) const { return ext_[axis][1] - ext_[axis][0]; }

  std::size_t index(int i, int j, int k = 0) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(n_[0]) *
               (static_cast<std::size_t>(j) +
                static_cast<std::size_t>(n_[1]) * static_cast<std::size_t>(k));
  }
  std::array<int, 3> unpack(std::size_t id) const;
  Point position(std::size_t id) const;

  bool is_boundary(std::size_t id) const {
    return boundary_ordinal_[id] != kInterior;
  }
  const std::vector<std::size_t>& interior_ids() const { return interior_ids_; }
  const std::vector<std::size_t>& boundary_ids() const { return boundary_ids_; }

  /// Dense renumbering of boundary nodes, in boundary_ids() order.
  std::size_t boundary_ordinal(std::size_t id) const;

  /// Axis (0..dim-1) and side (-1 low / +1 high) of the face owning a
  /// boundary node.
  int face_axis(std::size_t id) const;
  int face_side(std::size_t id) const;

  /// Unit outward normal of the owning face.
  Point normal(std::size_t id) const;

  /// Trapezoid quadrature weights: cell volume per node; face area per
  /// boundary node, taken over the tangential axes of the owning face.
  double volume_weight(std::size_t id) const;
  double boundary_weight(std::size_t id) const;

  /// True if p lies in the closed box (with a tiny relative slack).
  bool contains(const Point& p) const;

 private:
  static constexpr std::size_t kInterior = static_cast<std::size_t>(-1);

  int dim_ = 0;
  std::array<int, 3> n_{1, 1, 1};
  std::array<std::array<double, 2>, 3> ext_{};
  std::array<double, 3> h_{0.0, 0.0, 0.0};
  std::size_t node_count_ = 0;
  std::vector<std::size_t> interior_ids_;
  std::vector<std::size_t> boundary_ids_;
  std::vector<std::size_t> boundary_ordinal_;
};

Grid build_grid(int dim, const std::vector<int>& n,
                const std::vector<std::array<double, 2>>& extent = {});

/// Nodal values over the whole grid. The grid must outlive the field.
struct ScalarField {
  const Grid* grid = nullptr;
  std::vector<double> v;

  ScalarField() = default;
  explicit ScalarField(const Grid& g, double fill = 0.0)
      : grid(&g), v(g.node_count(), fill) {}

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  std::size_t size() const { return v.size(); }
};

/// Values on boundary nodes only, indexed by boundary ordinal.
struct BoundaryField {
  const Grid* grid = nullptr;
  std::vector<double> v;

  BoundaryField() = default;
  explicit BoundaryField(const Grid& g, double fill = 0.0)
      : grid(&g), v(g.boundary_count(), fill) {}

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  double at_node(std::size_t node_id) const;
  std::size_t size() const { return v.size(); }
};

/// One vector per node, stored per component; only the first dim() component
/// arrays are populated.
struct VectorField {
  const Grid* grid = nullptr;
  std::array<std::vector<double>, 3> comp;

  VectorField() = default;
  explicit VectorField(const Grid& g) : grid(&g) {
    for (int a = 0; a < g.dim(); ++a) comp[a].assign(g.node_count(), 0.0);
  }
};

ScalarField sample_scalar(const Grid& g,
                          const std::function<double(const Point&)>& f);
BoundaryField sample_boundary(const Grid& g,
                              const std::function<double(const Point&)>& f);

/// Second-order gradient: central differences where the axis index is
/// interior, one-sided three-point stencils on the axis ends.
VectorField gradient(const ScalarField& u);

/// normal(b) . F(b) per boundary node.
BoundaryField normal_trace(const VectorField& F);

/// Multilinear interpolation of a nodal field. Throws std::domain_error for
/// points outside the box.
double interpolate(const ScalarField& u, const Point& p);

// Norms and pairings used throughout the test suites. The weighted variants
// use the trapezoid quadrature weights, so they approximate the continuum
// L2 norms; the plain variants are Euclidean.
double l2_norm(const std::vector<double>& v);
double volume_norm(const ScalarField& u);
double boundary_norm(const BoundaryField& f);
double boundary_pairing(const BoundaryField& a, const BoundaryField& b);

} // namespace elcell
