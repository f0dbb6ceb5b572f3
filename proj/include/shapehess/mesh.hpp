#pragma once

#include "shapehess/deformation.hpp"
#include "shapehess/error.hpp"
#include "shapehess/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace shapehess {

enum class BoundaryTag : std::uint8_t { Dirichlet, Neumann };

/// Which boundary portion an integral runs over.
enum class TagFilter { Dirichlet, Neumann, Both };

inline bool matches(TagFilter filter, BoundaryTag tag) {
  return filter == TagFilter::Both || (filter == TagFilter::Dirichlet) == (tag == BoundaryTag::Dirichlet);
}

struct BoundaryEdge {
  std::array<int, 2> v;
  BoundaryTag tag;
};

/// Element geometry of an affine triangle: area and barycentric gradients.
struct TriangleGeometry {
  double area = 0.0;
  std::array<Vec2, 3> grad_lambda;
};

/// Triangulated planar domain with a Dirichlet/Neumann boundary partition and
/// the edge table that extends vertices to quadratic (P2) nodes.
///
/// Local edge e of triangle (v0, v1, v2) joins v_e and v_{(e+1)%3}. P2 node
/// numbering: vertices first, then one midpoint per edge (num_vertices() + edge id).
/// Boundary edges are stored oriented with the domain on their left.
class Mesh2D {
 public:
  struct BoundaryEdgeInfo {
    int triangle;
    int local_edge;
    int edge;
  };

  /// Per boundary vertex: incoming and outgoing boundary edge along the loop orientation.
  struct BoundaryVertexInfo {
    int edge_in = -1;
    int edge_out = -1;
  };

  Mesh2D(std::vector<Vec2> vertices, std::vector<std::array<int, 3>> triangles,
         std::vector<BoundaryEdge> boundary)
      : vertices_(std::move(vertices)), triangles_(std::move(triangles)), boundary_(std::move(boundary)) {
    build_topology();
    compute_geometry();
  }

  const std::vector<Vec2>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_; }
  const std::vector<std::array<int, 2>>& edges() const { return edges_; }
  const std::vector<std::array<int, 3>>& triangle_edges() const { return triangle_edges_; }
  const std::vector<BoundaryEdgeInfo>& boundary_info() const { return boundary_info_; }
  const std::vector<TriangleGeometry>& geometry() const { return geometry_; }

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  int num_p2_nodes() const { return num_vertices() + num_edges(); }

  /// Position of a P2 node (vertex or edge midpoint of the current vertices).
  Vec2 node(int id) const {
    if (id < num_vertices()) return vertices_[id];
    const auto& e = edges_[id - num_vertices()];
    return 0.5 * (vertices_[e[0]] + vertices_[e[1]]);
  }

  /// The six P2 node ids of a triangle: v0, v1, v2, m01, m12, m20.
  std::array<int, 6> element_nodes(int t) const {
    const auto& tri = triangles_[t];
    const auto& te = triangle_edges_[t];
    const int nv = num_vertices();
    return {tri[0], tri[1], tri[2], nv + te[0], nv + te[1], nv + te[2]};
  }

  /// Marks whether each edge lies on the boundary.
  const std::vector<char>& edge_on_boundary() const { return edge_on_boundary_; }
  const std::vector<char>& vertex_on_boundary() const { return vertex_on_boundary_; }
  const std::vector<BoundaryVertexInfo>& boundary_vertex_info() const { return boundary_vertex_; }

  double area() const {
    double a = 0.0;
    for (const auto& g : geometry_) a += g.area;
    return a;
  }

  double signed_area(int t) const {
    const auto& tri = triangles_[t];
    return 0.5 * cross(vertices_[tri[1]] - vertices_[tri[0]], vertices_[tri[2]] - vertices_[tri[0]]);
  }

  double boundary_length(TagFilter filter = TagFilter::Both) const {
    double len = 0.0;
    for (const auto& e : boundary_)
      if (matches(filter, e.tag)) len += (vertices_[e.v[1]] - vertices_[e.v[0]]).norm();
    return len;
  }

  double max_edge_length() const {
    double h = 0.0;
    for (const auto& e : edges_) h = std::max(h, (vertices_[e[1]] - vertices_[e[0]]).norm());
    return h;
  }

  /// Bounding-box diagonal, used as the length scale of the domain.
  double diameter() const {
    Vec2 lo = vertices_.front(), hi = vertices_.front();
    for (const auto& v : vertices_) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return (hi - lo).norm();
  }

  bool has_neumann() const {
    return std::any_of(boundary_.begin(), boundary_.end(),
                       [](const BoundaryEdge& e) { return e.tag == BoundaryTag::Neumann; });
  }

  /// Same topology and tags, new vertex positions. Throws INVERTED_ELEMENT if
  /// any triangle loses positive area.
  Mesh2D with_vertices(std::vector<Vec2> vertices) const {
    if (vertices.size() != vertices_.size())
      fail(ErrorCode::InvalidArgument, "vertex count mismatch in with_vertices");
    Mesh2D out = *this;
    out.vertices_ = std::move(vertices);
    out.compute_geometry();
    return out;
  }

 private:
  void build_topology() {
    const int nv = num_vertices();
    if (nv < 3 || triangles_.empty()) fail(ErrorCode::InvalidMesh, "mesh needs at least one triangle");
    for (const auto& t : triangles_)
      for (int i : t)
        if (i < 0 || i >= nv) fail(ErrorCode::InvalidMesh, "triangle references missing vertex");

    std::map<std::pair<int, int>, int> edge_id;
    std::vector<int> incidence;
    std::vector<std::pair<int, int>> first_owner;
    triangle_edges_.resize(triangles_.size());
    for (int t = 0; t < num_triangles(); ++t) {
      for (int e = 0; e < 3; ++e) {
        const int a = triangles_[t][e], b = triangles_[t][(e + 1) % 3];
        const auto key = std::minmax(a, b);
        auto [it, inserted] = edge_id.emplace(key, static_cast<int>(edges_.size()));
        if (inserted) {
          edges_.push_back({key.first, key.second});
          incidence.push_back(0);
          first_owner.emplace_back(t, e);
        }
        ++incidence[it->second];
        triangle_edges_[t][e] = it->second;
      }
    }
    for (int c : incidence)
      if (c > 2) fail(ErrorCode::InvalidMesh, "edge shared by more than two triangles");

    edge_on_boundary_.assign(edges_.size(), 0);
    vertex_on_boundary_.assign(nv, 0);
    boundary_info_.clear();
    std::vector<char> seen(edges_.size(), 0);
    bool any_dirichlet = false;
    for (auto& be : boundary_) {
      const auto key = std::minmax(be.v[0], be.v[1]);
      auto it = edge_id.find(key);
      if (it == edge_id.end()) fail(ErrorCode::InvalidMesh, "boundary edge is not a mesh edge");
      const int id = it->second;
      if (incidence[id] != 1) fail(ErrorCode::InvalidMesh, "boundary edge is shared by two triangles");
      if (seen[id]) fail(ErrorCode::InvalidMesh, "boundary edge listed twice (each edge needs exactly one tag)");
      seen[id] = 1;
      const auto [t, local] = first_owner[id];
      // Orient with the owning triangle so the domain lies on the left.
      be.v = {triangles_[t][local], triangles_[t][(local + 1) % 3]};
      boundary_info_.push_back({t, local, id});
      edge_on_boundary_[id] = 1;
      vertex_on_boundary_[be.v[0]] = vertex_on_boundary_[be.v[1]] = 1;
      any_dirichlet = any_dirichlet || be.tag == BoundaryTag::Dirichlet;
    }
    for (std::size_t id = 0; id < edges_.size(); ++id)
      if (incidence[id] == 1 && !seen[id]) fail(ErrorCode::InvalidMesh, "untagged boundary edge");
    if (!any_dirichlet) fail(ErrorCode::InvalidMesh, "Dirichlet boundary must be nonempty");

    boundary_vertex_.assign(nv, {});
    for (int i = 0; i < static_cast<int>(boundary_.size()); ++i) {
      auto& out = boundary_vertex_[boundary_[i].v[0]].edge_out;
      auto& in = boundary_vertex_[boundary_[i].v[1]].edge_in;
      if (out != -1 || in != -1) fail(ErrorCode::InvalidMesh, "boundary is not a union of closed simple loops");
      out = i;
      in = i;
    }
    for (int v = 0; v < nv; ++v)
      if (vertex_on_boundary_[v] && (boundary_vertex_[v].edge_in < 0 || boundary_vertex_[v].edge_out < 0))
        fail(ErrorCode::InvalidMesh, "boundary loop is not closed");
  }

  void compute_geometry() {
    geometry_.resize(triangles_.size());
    for (int t = 0; t < num_triangles(); ++t) {
      const auto& tri = triangles_[t];
      const Vec2& p0 = vertices_[tri[0]];
      const Vec2& p1 = vertices_[tri[1]];
      const Vec2& p2 = vertices_[tri[2]];
      const double twice = cross(p1 - p0, p2 - p0);
      if (!(twice > 0.0))
        fail(ErrorCode::InvertedElement, "triangle " + std::to_string(t) + " has non-positive area");
      auto& g = geometry_[t];
      g.area = 0.5 * twice;
      g.grad_lambda[0] = Vec2(p1.y() - p2.y(), p2.x() - p1.x()) / twice;
      g.grad_lambda[1] = Vec2(p2.y() - p0.y(), p0.x() - p2.x()) / twice;
      g.grad_lambda[2] = Vec2(p0.y() - p1.y(), p1.x() - p0.x()) / twice;
    }
  }

  std::vector<Vec2> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<BoundaryEdge> boundary_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<std::array<int, 3>> triangle_edges_;
  std::vector<BoundaryEdgeInfo> boundary_info_;
  std::vector<BoundaryVertexInfo> boundary_vertex_;
  std::vector<char> edge_on_boundary_;
  std::vector<char> vertex_on_boundary_;
  std::vector<TriangleGeometry> geometry_;
};

using MeshPtr = std::shared_ptr<const Mesh2D>;

inline std::pair<double, double> jacobian_invariants(const Mat2& dv) { return {dv.trace(), dv.determinant()}; }

/// Lagrangian image of the mesh under x -> x + eps V(x). Midpoint nodes follow
/// the deformed vertices.
inline Mesh2D deform(const Mesh2D& mesh, const DeformationField& field, double eps) {
  std::vector<Vec2> moved(mesh.vertices().size());
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const Vec2& x = mesh.vertices()[i];
    moved[i] = x + eps * field.value(x);
  }
  return mesh.with_vertices(std::move(moved));
}

namespace detail {

// Triangulates the band between two closed rings of points (both counter-clockwise,
// starting at angle zero) by merging them in angular order.
inline void stitch_rings(const std::vector<int>& inner, const std::vector<double>& inner_angle,
                         const std::vector<int>& outer, const std::vector<double>& outer_angle,
                         std::vector<std::array<int, 3>>& tris) {
  const std::size_t m = inner.size(), n = outer.size();
  std::size_t i = 0, j = 0;
  auto next_angle = [](const std::vector<double>& a, std::size_t k) {
    return k + 1 < a.size() ? a[k + 1] : 2.0 * kPi;
  };
  while (i < m || j < n) {
    const bool advance_inner = j == n || (i < m && next_angle(inner_angle, i) <= next_angle(outer_angle, j));
    if (advance_inner) {
      tris.push_back({inner[i % m], outer[j % n], inner[(i + 1) % m]});
      ++i;
    } else {
      tris.push_back({inner[i % m], outer[j % n], outer[(j + 1) % n]});
      ++j;
    }
  }
}

inline void orient_positive(const std::vector<Vec2>& pts, std::vector<std::array<int, 3>>& tris) {
  for (auto& t : tris)
    if (cross(pts[t[1]] - pts[t[0]], pts[t[2]] - pts[t[0]]) < 0.0) std::swap(t[1], t[2]);
}

inline int ring_count(double circumference, double h, int minimum) {
  return std::max(minimum, static_cast<int>(std::lround(circumference / h)));
}

}  // namespace detail

/// Quasi-uniform disk triangulation built from concentric rings. Boundary
/// vertices lie on the circle; the first round(n * dirichlet_fraction) boundary
/// edges counter-clockwise from angle zero are Dirichlet, the rest Neumann.
inline Mesh2D generate_disk(double radius, double h, double dirichlet_fraction = 1.0) {
  if (!(radius > 0.0) || !(h > 0.0) || !(h < radius))
    fail(ErrorCode::InvalidArgument, "disk generator needs radius > 0 and 0 < h < radius");
  if (!(dirichlet_fraction > 0.0) || dirichlet_fraction > 1.0)
    fail(ErrorCode::InvalidArgument, "dirichlet_fraction must lie in (0, 1]");
  const int rings = std::max(1, static_cast<int>(std::lround(radius / h)));
  std::vector<Vec2> pts{Vec2::Zero()};
  std::vector<std::array<int, 3>> tris;
  std::vector<int> prev{0};
  std::vector<double> prev_angle{0.0};
  for (int k = 1; k <= rings; ++k) {
    const double r = radius * k / rings;
    int n = detail::ring_count(2.0 * kPi * r, h, 6);
    if (k == rings && dirichlet_fraction < 1.0) {
      // put the Dirichlet/Neumann junctions on vertices when a nearby ring size allows it
      for (int extra = 0; extra < 24; ++extra) {
        const double split = (n + extra) * dirichlet_fraction;
        if (std::abs(split - std::round(split)) < 1e-9) {
          n += extra;
          break;
        }
      }
    }
    std::vector<int> ring(n);
    std::vector<double> angle(n);
    for (int j = 0; j < n; ++j) {
      angle[j] = 2.0 * kPi * j / n;
      ring[j] = static_cast<int>(pts.size());
      pts.emplace_back(r * std::cos(angle[j]), r * std::sin(angle[j]));
    }
    if (k == 1) {
      for (int j = 0; j < n; ++j) tris.push_back({0, ring[j], ring[(j + 1) % n]});
    } else {
      detail::stitch_rings(prev, prev_angle, ring, angle, tris);
    }
    prev = std::move(ring);
    prev_angle = std::move(angle);
  }
  detail::orient_positive(pts, tris);
  std::vector<BoundaryEdge> boundary;
  const int n = static_cast<int>(prev.size());
  const int n_dirichlet = std::clamp(static_cast<int>(std::lround(n * dirichlet_fraction)), 1, n);
  for (int j = 0; j < n; ++j) {
    const BoundaryTag tag = j < n_dirichlet ? BoundaryTag::Dirichlet : BoundaryTag::Neumann;
    boundary.push_back({{prev[j], prev[(j + 1) % n]}, tag});
  }
  return Mesh2D(std::move(pts), std::move(tris), std::move(boundary));
}

/// Ellipse with semi-axes a (x) and b (y): a unit-disk ring mesh stretched affinely.
inline Mesh2D generate_ellipse(double a, double b, double h, double dirichlet_fraction = 1.0) {
  if (!(a > 0.0) || !(b > 0.0)) fail(ErrorCode::InvalidArgument, "ellipse semi-axes must be positive");
  Mesh2D disk = generate_disk(1.0, h / std::max(a, b), dirichlet_fraction);
  std::vector<Vec2> pts = disk.vertices();
  for (auto& p : pts) p = Vec2(a * p.x(), b * p.y());
  return disk.with_vertices(std::move(pts));
}

/// Annulus r_in < |x| < r_out with one tag per circle.
inline Mesh2D generate_annulus(double r_in, double r_out, double h, BoundaryTag inner_tag = BoundaryTag::Neumann,
                               BoundaryTag outer_tag = BoundaryTag::Dirichlet) {
  if (!(r_in > 0.0) || !(r_out > r_in) || !(h > 0.0) || !(h < r_out - r_in))
    fail(ErrorCode::InvalidArgument, "annulus generator needs 0 < r_in < r_out and 0 < h < r_out - r_in");
  const int rings = std::max(1, static_cast<int>(std::lround((r_out - r_in) / h)));
  std::vector<Vec2> pts;
  std::vector<std::array<int, 3>> tris;
  std::vector<int> first, prev;
  std::vector<double> prev_angle;
  for (int k = 0; k <= rings; ++k) {
    const double r = r_in + (r_out - r_in) * k / rings;
    const int n = detail::ring_count(2.0 * kPi * r, h, 8);
    std::vector<int> ring(n);
    std::vector<double> angle(n);
    for (int j = 0; j < n; ++j) {
      angle[j] = 2.0 * kPi * j / n;
      ring[j] = static_cast<int>(pts.size());
      pts.emplace_back(r * std::cos(angle[j]), r * std::sin(angle[j]));
    }
    if (k == 0) first = ring;
    else detail::stitch_rings(prev, prev_angle, ring, angle, tris);
    prev = std::move(ring);
    prev_angle = std::move(angle);
  }
  detail::orient_positive(pts, tris);
  std::vector<BoundaryEdge> boundary;
  for (std::size_t j = 0; j < prev.size(); ++j) boundary.push_back({{prev[j], prev[(j + 1) % prev.size()]}, outer_tag});
  for (std::size_t j = 0; j < first.size(); ++j)
    boundary.push_back({{first[(j + 1) % first.size()], first[j]}, inner_tag});
  return Mesh2D(std::move(pts), std::move(tris), std::move(boundary));
}

/// Axis-aligned rectangle [x0, x0+width] x [y0, y0+height] split into right
/// triangles. dirichlet_sides holds any of "left", "right", "bottom", "top".
inline Mesh2D generate_rectangle(double width, double height, double h, const std::set<std::string>& dirichlet_sides,
                                 const Vec2& origin = Vec2::Zero()) {
  if (!(width > 0.0) || !(height > 0.0) || !(h > 0.0))
    fail(ErrorCode::InvalidArgument, "rectangle generator needs positive width, height and h");
  for (const auto& s : dirichlet_sides)
    if (s != "left" && s != "right" && s != "bottom" && s != "top")
      fail(ErrorCode::InvalidArgument, "unknown rectangle side '" + s + "'");
  const int nx = std::max(1, static_cast<int>(std::lround(width / h)));
  const int ny = std::max(1, static_cast<int>(std::lround(height / h)));
  std::vector<Vec2> pts;
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) pts.emplace_back(origin.x() + width * i / nx, origin.y() + height * j / ny);
  std::vector<std::array<int, 3>> tris;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      tris.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      tris.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  auto tag_of = [&](const char* side) {
    return dirichlet_sides.count(side) ? BoundaryTag::Dirichlet : BoundaryTag::Neumann;
  };
  std::vector<BoundaryEdge> boundary;
  for (int i = 0; i < nx; ++i) boundary.push_back({{id(i, 0), id(i + 1, 0)}, tag_of("bottom")});
  for (int j = 0; j < ny; ++j) boundary.push_back({{id(nx, j), id(nx, j + 1)}, tag_of("right")});
  for (int i = nx; i > 0; --i) boundary.push_back({{id(i, ny), id(i - 1, ny)}, tag_of("top")});
  for (int j = ny; j > 0; --j) boundary.push_back({{id(0, j), id(0, j - 1)}, tag_of("left")});
  return Mesh2D(std::move(pts), std::move(tris), std::move(boundary));
}

// Mesh text format:
//   shapehess-mesh v1
//   vertices N   + N lines "x y"
//   triangles M  + M lines "i j k" (0-based)
//   boundary K   + K lines "i j TAG", TAG in {D, N}

inline void write_mesh(std::ostream& out, const Mesh2D& mesh) {
  out << "shapehess-mesh v1\n";
  out << std::setprecision(17);
  out << "vertices " << mesh.num_vertices() << '\n';
  for (const auto& v : mesh.vertices()) out << v.x() << ' ' << v.y() << '\n';
  out << "triangles " << mesh.num_triangles() << '\n';
  for (const auto& t : mesh.triangles()) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  out << "boundary " << mesh.boundary_edges().size() << '\n';
  for (const auto& e : mesh.boundary_edges())
    out << e.v[0] << ' ' << e.v[1] << ' ' << (e.tag == BoundaryTag::Dirichlet ? 'D' : 'N') << '\n';
}

inline Mesh2D read_mesh(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("shapehess-mesh v1", 0) != 0)
    fail(ErrorCode::IoError, "missing 'shapehess-mesh v1' header");
  auto section = [&](const std::string& name) {
    std::string word;
    long count = -1;
    if (!(in >> word >> count) || word != name || count < 0)
      fail(ErrorCode::IoError, "expected section '" + name + " <count>'");
    return static_cast<std::size_t>(count);
  };
  std::vector<Vec2> vertices(section("vertices"));
  for (auto& v : vertices)
    if (!(in >> v.x() >> v.y())) fail(ErrorCode::IoError, "truncated vertex list");
  std::vector<std::array<int, 3>> tris(section("triangles"));
  for (auto& t : tris)
    if (!(in >> t[0] >> t[1] >> t[2])) fail(ErrorCode::IoError, "truncated triangle list");
  std::vector<BoundaryEdge> boundary(section("boundary"));
  for (auto& e : boundary) {
    std::string tag;
    if (!(in >> e.v[0] >> e.v[1] >> tag)) fail(ErrorCode::IoError, "truncated boundary list");
    if (tag == "D") e.tag = BoundaryTag::Dirichlet;
    else if (tag == "N") e.tag = BoundaryTag::Neumann;
    else fail(ErrorCode::IoError, "boundary tag must be D or N, got '" + tag + "'");
  }
  return Mesh2D(std::move(vertices), std::move(tris), std::move(boundary));
}

inline Mesh2D read_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open mesh file '" + path + "'");
  return read_mesh(in);
}

}  // namespace shapehess
