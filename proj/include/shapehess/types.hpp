#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>

namespace shapehess {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = 3.14159265358979323846;

inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Outward normal of a segment traversed with the domain on its left.
inline Vec2 right_normal(const Vec2& direction) { return Vec2(direction.y(), -direction.x()); }

inline Mat2 outer(const Vec2& a, const Vec2& b) { return a * b.transpose(); }

inline Mat2 symmetrized(const Mat2& m) { return 0.5 * (m + m.transpose()); }

/// A point inside a triangle: element index, barycentric coordinates and position.
struct ElementPoint {
  int element = -1;
  Eigen::Vector3d bary = Eigen::Vector3d::Zero();
  Vec2 x = Vec2::Zero();
};

}  // namespace shapehess
