#include "elcell/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace elcell {

Grid::Grid(int dim, const std::vector<int>& n,
           const std::vector<std::array<double, 2>>& extent) {
  if (dim != 2 && dim != 3)
    throw std::invalid_argument("grid: dim must be 2 or 3, got " +
                                std::to_string(dim));
  if (static_cast<int>(n.size()) != dim)
    throw std::invalid_argument("grid: need one node count per axis");
  if (!extent.empty() && static_cast<int>(extent.size()) != dim)
    throw std::invalid_argument("grid: need one extent interval per axis");

  dim_ = dim;
  for (int a = 0; a < dim; ++a) {
    if (n[a] < 3)
      throw std::invalid_argument("grid: axis " + std::to_string(a) +
                                  " needs at least 3 nodes, got " +
                                  std::to_string(n[a]));
    n_[a] = n[a];
    ext_[a] = extent.empty() ? std::array<double, 2>{0.0, 1.0} : extent[a];
    if (!(ext_[a][1] > ext_[a][0]))
      throw std::invalid_argument("grid: empty extent on axis " +
                                  std::to_string(a));
    h_[a] = (ext_[a][1] - ext_[a][0]) / (n_[a] - 1);
  }

  node_count_ = 1;
  for (int a = 0; a < dim; ++a) node_count_ *= static_cast<std::size_t>(n_[a]);

  boundary_ordinal_.assign(node_count_, kInterior);
  const int nz = (dim_ == 3) ? n_[2] : 1;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < n_[1]; ++j)
      for (int i = 0; i < n_[0]; ++i) {
        const bool bdry = i == 0 || i == n_[0] - 1 || j == 0 ||
                          j == n_[1] - 1 ||
                          (dim_ == 3 && (k == 0 || k == nz - 1));
        const std::size_t id = index(i, j, k);
        if (bdry) {
          boundary_ordinal_[id] = boundary_ids_.size();
          boundary_ids_.push_back(id);
        } else {
          interior_ids_.push_back(id);
        }
      }
}

std::array<int, 3> Grid::unpack(std::size_t id) const {
  const auto nx = static_cast<std::size_t>(n_[0]);
  const auto ny = static_cast<std::size_t>(n_[1]);
  std::array<int, 3> c{};
  c[0] = static_cast<int>(id % nx);
  c[1] = static_cast<int>((id / nx) % ny);
  c[2] = static_cast<int>(id / (nx * ny));
  return c;
}

Point Grid::position(std::size_t id) const {
  const auto c = unpack(id);
  Point p{0.0, 0.0, 0.0};
  for (int a = 0; a < dim_; ++a) p[a] = ext_[a][0] + h_[a] * c[a];
  return p;
}

std::size_t Grid::boundary_ordinal(std::size_t id) const {
  const std::size_t ord = boundary_ordinal_[id];
  if (ord == kInterior)
    throw std::invalid_argument("grid: node " + std::to_string(id) +
                                " is not a boundary node");
  return ord;
}

int Grid::face_axis(std::size_t id) const {
  const auto c = unpack(id);
  for (int a = 0; a < dim_; ++a)
    if (c[a] == 0 || c[a] == n_[a] - 1) return a;
  throw std::invalid_argument("grid: node " + std::to_string(id) +
                              " is not a boundary node");
}

int Grid::face_side(std::size_t id) const {
  const int a = face_axis(id);
  return unpack(id)[a] == 0 ? -1 : +1;
}

Point Grid::normal(std::size_t id) const {
  Point nrm{0.0, 0.0, 0.0};
  nrm[face_axis(id)] = static_cast<double>(face_side(id));
  return nrm;
}

double Grid::volume_weight(std::size_t id) const {
  const auto c = unpack(id);
  double w = 1.0;
  for (int a = 0; a < dim_; ++a) {
    const bool edge = c[a] == 0 || c[a] == n_[a] - 1;
    w *= edge ? 0.5 * h_[a] : h_[a];
  }
  return w;
}

double Grid::boundary_weight(std::size_t id) const {
  // Trapezoid weight on the closed surface: one contribution per face the
  // node lies on, so edge and corner nodes pick up every incident face.
  const auto c = unpack(id);
  double w = 0.0;
  for (int axis = 0; axis < dim_; ++axis) {
    if (c[axis] != 0 && c[axis] != n_[axis] - 1) continue;
    double face = 1.0;
    for (int a = 0; a < dim_; ++a) {
      if (a == axis) continue;
      const bool edge = c[a] == 0 || c[a] == n_[a] - 1;
      face *= edge ? 0.5 * h_[a] : h_[a];
    }
    w += face;
  }
  return w;
}

bool Grid::contains(const Point& p) const {
  for (int a = 0; a < dim_; ++a) {
    const double slack = 1e-12 * (ext_[a][1] - ext_[a][0]);
    if (p[a] < ext_[a][0] - slack || p[a] > ext_[a][1] + slack) return false;
  }
  return true;
}

Grid build_grid(int dim, const std::vector<int>& n,
                const std::vector<std::array<double, 2>>& extent) {
  return Grid(dim, n, extent);
}

double BoundaryField::at_node(std::size_t node_id) const {
  return v[grid->boundary_ordinal(node_id)];
}

ScalarField sample_scalar(const Grid& g,
                          const std::function<double(const Point&)>& f) {
  ScalarField out(g);
  for (std::size_t id = 0; id < g.node_count(); ++id)
    out[id] = f(g.position(id));
  return out;
}

BoundaryField sample_boundary(const Grid& g,
                              const std::function<double(const Point&)>& f) {
  BoundaryField out(g);
  for (std::size_t b = 0; b < g.boundary_count(); ++b)
    out[b] = f(g.position(g.boundary_ids()[b]));
  return out;
}

VectorField gradient(const ScalarField& u) {
  const Grid& g = *u.grid;
  VectorField grad(g);
  std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(g.nodes_along(0)),
                                    static_cast<std::size_t>(g.nodes_along(0)) *
                                        static_cast<std::size_t>(g.nodes_along(1))};
  for (std::size_t id = 0; id < g.node_count(); ++id) {
    const auto c = g.unpack(id);
    for (int a = 0; a < g.dim(); ++a) {
      const double h = g.spacing(a);
      const std::size_t s = stride[a];
      const int last = g.nodes_along(a) - 1;
      double d;
      if (c[a] == 0) {
        // one-sided, second order: (-3 u0 + 4 u1 - u2) / (2h)
        d = (-3.0 * u[id] + 4.0 * u[id + s] - u[id + 2 * s]) / (2.0 * h);
      } else if (c[a] == last) {
        d = (3.0 * u[id] - 4.0 * u[id - s] + u[id - 2 * s]) / (2.0 * h);
      } else {
        d = (u[id + s] - u[id - s]) / (2.0 * h);
      }
      grad.comp[a][id] = d;
    }
  }
  return grad;
}

BoundaryField normal_trace(const VectorField& F) {
  const Grid& g = *F.grid;
  BoundaryField out(g);
  for (std::size_t b = 0; b < g.boundary_count(); ++b) {
    const std::size_t id = g.boundary_ids()[b];
    const int axis = g.face_axis(id);
    out[b] = static_cast<double>(g.face_side(id)) * F.comp[axis][id];
  }
  return out;
}

double interpolate(const ScalarField& u, const Point& p) {
  const Grid& g = *u.grid;
  if (!g.contains(p))
    throw std::domain_error("interpolate: point outside the grid box");
  // Locate the cell and the local coordinates within it.
  std::array<int, 3> cell{0, 0, 0};
  std::array<double, 3> t{0.0, 0.0, 0.0};
  for (int a = 0; a < g.dim(); ++a) {
    const double rel = (p[a] - g.lo(a)) / g.spacing(a);
    int i = static_cast<int>(std::floor(rel));
    i = std::max(0, std::min(i, g.nodes_along(a) - 2));
    cell[a] = i;
    t[a] = rel - i;
  }
  double acc = 0.0;
  const int corners = 1 << g.dim();
  for (int corner = 0; corner < corners; ++corner) {
    double w = 1.0;
    std::array<int, 3> c = cell;
    for (int a = 0; a < g.dim(); ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? t[a] : 1.0 - t[a];
      c[a] += bit;
    }
    acc += w * u[g.index(c[0], c[1], c[2])];
  }
  return acc;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double volume_norm(const ScalarField& u) {
  const Grid& g = *u.grid;
  double s = 0.0;
  for (std::size_t id = 0; id < g.node_count(); ++id)
    s += g.volume_weight(id) * u[id] * u[id];
  return std::sqrt(s);
}

double boundary_norm(const BoundaryField& f) {
  const Grid& g = *f.grid;
  double s = 0.0;
  for (std::size_t b = 0; b < g.boundary_count(); ++b)
    s += g.boundary_weight(g.boundary_ids()[b]) * f[b] * f[b];
  return std::sqrt(s);
}

double boundary_pairing(const BoundaryField& a, const BoundaryField& b) {
  const Grid& g = *a.grid;
  double s = 0.0;
  for (std::size_t i = 0; i < g.boundary_count(); ++i)
    s += g.boundary_weight(g.boundary_ids()[i]) * a[i] * b[i];
  return s;
}

} // namespace elcell
