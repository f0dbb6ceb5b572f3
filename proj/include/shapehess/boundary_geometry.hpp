#pragma once

#include "shapehess/fem.hpp"
#include "shapehess/mesh.hpp"

#include <cmath>
#include <vector>

namespace shapehess {

/// Smoothed boundary data of a polygonal boundary read as a sampled C^2 curve.
///
/// Vertex normals weight the two adjacent edge normals by inverse edge length,
/// which reproduces the radial normal exactly at vertices on a circle. Curvature
/// at a vertex is the turning angle over the mean adjacent edge length. Inside an
/// edge both are interpolated linearly (the normal renormalized).
class BoundaryGeometry {
 public:
  explicit BoundaryGeometry(const Mesh2D& mesh)
      : mesh_(&mesh), normal_(mesh.num_vertices(), Vec2::Zero()), curvature_(mesh.num_vertices(), 0.0) {
    const auto& edges = mesh.boundary_edges();
    const auto& v = mesh.vertices();
    for (int i = 0; i < mesh.num_vertices(); ++i) {
      if (!mesh.vertex_on_boundary()[i]) continue;
      const auto& info = mesh.boundary_vertex_info()[i];
      const auto& ein = edges[info.edge_in];
      const auto& eout = edges[info.edge_out];
      const Vec2 din = v[ein.v[1]] - v[ein.v[0]];
      const Vec2 dout = v[eout.v[1]] - v[eout.v[0]];
      const double lin = din.norm(), lout = dout.norm();
      normal_[i] = (right_normal(din) / (lin * lin) + right_normal(dout) / (lout * lout)).normalized();
      const double turn = std::atan2(cross(din, dout), din.dot(dout));
      curvature_[i] = turn / (0.5 * (lin + lout));
    }
  }

  const Vec2& vertex_normal(int v) const { return normal_[v]; }
  double vertex_curvature(int v) const { return curvature_[v]; }

  struct Frame {
    Vec2 normal;
    Vec2 tangent;  // domain on the left
    double curvature;
  };

  /// Smoothed frame at parameter s of boundary edge b.
  Frame frame(int b, double s) const {
    const auto& e = mesh_->boundary_edges()[b];
    const Vec2 n = ((1.0 - s) * normal_[e.v[0]] + s * normal_[e.v[1]]).normalized();
    return {n, Vec2(-n.y(), n.x()), (1.0 - s) * curvature_[e.v[0]] + s * curvature_[e.v[1]]};
  }
  Frame frame(const BoundaryPoint& bp) const { return frame(bp.boundary_edge, bp.s); }

 private:
  const Mesh2D* mesh_;
  std::vector<Vec2> normal_;
  std::vector<double> curvature_;
};

}  // namespace shapehess
