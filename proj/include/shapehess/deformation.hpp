#pragma once

#include "shapehess/error.hpp"
#include "shapehess/types.hpp"

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace shapehess {

/// A C^1 vector field V driving the perturbation x -> x + eps V(x), together
/// with its Jacobian DV. ANALYTIC fields carry a closed-form Jacobian;
/// FD_JACOBIAN fields differentiate the value by central differences.
class DeformationField {
 public:
  enum class Kind { Analytic, FdJacobian };
  using ValueFn = std::function<Vec2(const Vec2&)>;
  using JacobianFn = std::function<Mat2(const Vec2&)>;

  DeformationField() : DeformationField(analytic([](const Vec2&) { return Vec2::Zero().eval(); },
                                                 [](const Vec2&) { return Mat2::Zero().eval(); }, "zero")) {}

  static DeformationField analytic(ValueFn value, JacobianFn jacobian, std::string name) {
    DeformationField v(std::move(value), std::move(name));
    v.jacobian_ = std::move(jacobian);
    v.kind_ = Kind::Analytic;
    return v;
  }

  /// Field whose Jacobian is taken by central differences with the given step
  /// (a sensible default is 1e-5 times the mesh diameter).
  static DeformationField fd_jacobian(ValueFn value, double step, std::string name) {
    if (!(step > 0.0)) fail(ErrorCode::InvalidArgument, "fd_jacobian step must be positive");
    DeformationField v(std::move(value), std::move(name));
    v.kind_ = Kind::FdJacobian;
    v.fd_step_ = step;
    return v;
  }

  Vec2 value(const Vec2& x) const { return value_(x); }

  Mat2 jacobian(const Vec2& x) const {
    if (kind_ == Kind::Analytic) return jacobian_(x);
    return central_difference_jacobian(x, fd_step_);
  }

  /// Central-difference Jacobian of the value map, independent of kind.
  Mat2 central_difference_jacobian(const Vec2& x, double step) const {
    Mat2 d;
    for (int j = 0; j < 2; ++j) {
      Vec2 e = Vec2::Zero();
      e[j] = step;
      d.col(j) = (value_(x + e) - value_(x - e)) / (2.0 * step);
    }
    return d;
  }

  Kind kind() const { return kind_; }
  double fd_step() const { return fd_step_; }
  const std::string& name() const { return name_; }

  DeformationField scaled(double t) const {
    DeformationField out = *this;
    auto value = value_;
    out.value_ = [value, t](const Vec2& x) { return Vec2(t * value(x)); };
    if (kind_ == Kind::Analytic) {
      auto jac = jacobian_;
      out.jacobian_ = [jac, t](const Vec2& x) { return Mat2(t * jac(x)); };
    }
    out.name_ = name_ + "*" + std::to_string(t);
    return out;
  }

  friend DeformationField operator+(const DeformationField& a, const DeformationField& b) {
    ValueFn value = [a, b](const Vec2& x) { return Vec2(a.value(x) + b.value(x)); };
    if (a.kind_ == Kind::Analytic && b.kind_ == Kind::Analytic) {
      JacobianFn jac = [a, b](const Vec2& x) { return Mat2(a.jacobian(x) + b.jacobian(x)); };
      return analytic(std::move(value), std::move(jac), a.name_ + "+" + b.name_);
    }
    return fd_jacobian(std::move(value), std::max(a.fd_step_, b.fd_step_), a.name_ + "+" + b.name_);
  }

 private:
  DeformationField(ValueFn value, std::string name) : value_(std::move(value)), name_(std::move(name)) {}

  ValueFn value_;
  JacobianFn jacobian_;
  Kind kind_ = Kind::Analytic;
  double fd_step_ = 1e-5;
  std::string name_;
};

/// Named deformation presets.
namespace fields {

inline DeformationField zero() { return DeformationField(); }

inline DeformationField constant(const Vec2& c) {
  return DeformationField::analytic([c](const Vec2&) { return c; },
                                    [](const Vec2&) { return Mat2::Zero().eval(); }, "translation");
}

/// V(x) = scale * (x - center).
inline DeformationField dilation(double scale = 1.0, const Vec2& center = Vec2::Zero()) {
  return DeformationField::analytic([scale, center](const Vec2& x) { return Vec2(scale * (x - center)); },
                                    [scale](const Vec2&) { return Mat2(scale * Mat2::Identity()); },
                                    "dilation");
}

/// Infinitesimal rotation V(x) = omega * J (x - center), tangent to circles.
inline DeformationField spin(double omega = 1.0, const Vec2& center = Vec2::Zero()) {
  Mat2 rot;
  rot << 0.0, -omega, omega, 0.0;
  return DeformationField::analytic([rot, center](const Vec2& x) { return Vec2(rot * (x - center)); },
                                    [rot](const Vec2&) { return rot; }, "spin");
}

/// Radial bump supported in the open ball B(center, radius):
/// V(x) = amplitude/radius * (1 - |d|^2/radius^2)^3 d, d = x - center. C^2 across the support edge.
inline DeformationField radial_bump(const Vec2& center, double radius, double amplitude = 1.0) {
  if (!(radius > 0.0)) fail(ErrorCode::InvalidArgument, "bump radius must be positive");
  const double r2 = radius * radius;
  auto value = [=](const Vec2& x) -> Vec2 {
    const Vec2 d = x - center;
    const double q = d.squaredNorm() / r2;
    if (q >= 1.0) return Vec2::Zero();
    const double s = (1.0 - q) * (1.0 - q) * (1.0 - q);
    return amplitude / radius * s * d;
  };
  auto jac = [=](const Vec2& x) -> Mat2 {
    const Vec2 d = x - center;
    const double q = d.squaredNorm() / r2;
    if (q >= 1.0) return Mat2::Zero();
    const double s = (1.0 - q) * (1.0 - q) * (1.0 - q);
    const double ds = -6.0 * (1.0 - q) * (1.0 - q) / r2;
    return amplitude / radius * (s * Mat2::Identity() + ds * outer(d, d));
  };
  return DeformationField::analytic(value, jac, "bump");
}

/// Componentwise polynomial in the monomials 1, x, y, x^2, xy, y^2, x^3, x^2y, xy^2, y^3
/// (missing trailing coefficients are zero).
inline DeformationField polynomial(std::vector<double> coeffs_x, std::vector<double> coeffs_y) {
  if (coeffs_x.size() > 10 || coeffs_y.size() > 10)
    fail(ErrorCode::InvalidArgument, "polynomial deformation supports at most 10 coefficients per component");
  coeffs_x.resize(10, 0.0);
  coeffs_y.resize(10, 0.0);
  auto eval = [](const std::vector<double>& c, const Vec2& p) {
    const double x = p.x(), y = p.y();
    return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y + c[6] * x * x * x +
           c[7] * x * x * y + c[8] * x * y * y + c[9] * y * y * y;
  };
  auto grad = [](const std::vector<double>& c, const Vec2& p) {
    const double x = p.x(), y = p.y();
    return Vec2(c[1] + 2 * c[3] * x + c[4] * y + 3 * c[6] * x * x + 2 * c[7] * x * y + c[8] * y * y,
                c[2] + c[4] * x + 2 * c[5] * y + c[7] * x * x + 2 * c[8] * x * y + 3 * c[9] * y * y);
  };
  return DeformationField::analytic(
      [=](const Vec2& x) { return Vec2(eval(coeffs_x, x), eval(coeffs_y, x)); },
      [=](const Vec2& x) {
        Mat2 d;
        d.row(0) = grad(coeffs_x, x).transpose();
        d.row(1) = grad(coeffs_y, x).transpose();
        return d;
      },
      "polynomial");
}

/// Linear field normal to the ellipse x^2/a^2 + y^2/b^2 = 1: V = sqrt(ab) (x/a^2, y/b^2).
/// On a disk of radius R this is x/R, the unit outward normal on the circle.
inline DeformationField ellipse_normal(double a, double b) {
  const double s = std::sqrt(a * b);
  Mat2 m = Mat2::Zero();
  m(0, 0) = s / (a * a);
  m(1, 1) = s / (b * b);
  return DeformationField::analytic([m](const Vec2& x) { return Vec2(m * x); },
                                    [m](const Vec2&) { return m; }, "normal");
}

/// Radial field equal to the outward unit normal on both circles of an annulus:
/// V = w(r) x/r with w linear from -1 at r_in to +1 at r_out.
inline DeformationField annulus_normal(double r_in, double r_out) {
  const double slope = 2.0 / (r_out - r_in);
  auto phi = [=](double r) { return (-1.0 + slope * (r - r_in)) / r; };
  auto dphi = [=](double r) { return (slope * r - (-1.0 + slope * (r - r_in))) / (r * r); };
  return DeformationField::analytic(
      [=](const Vec2& x) { return Vec2(phi(x.norm()) * x); },
      [=](const Vec2& x) {
        const double r = x.norm();
        return Mat2(phi(r) * Mat2::Identity() + dphi(r) / r * outer(x, x));
      },
      "normal");
}

}  // namespace fields

}  // namespace shapehess
