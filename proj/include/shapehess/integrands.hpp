#pragma once

#include "shapehess/error.hpp"
#include "shapehess/types.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <optional>
#include <string>

namespace shapehess {

/// Convex integrand pair (f, g) of the energy  u -> int f(grad u) + g(u),
/// with first and second derivatives and, where available in closed form,
/// the Fenchel conjugates f* and g*.
struct ConvexPair {
  enum class Kind { Torsion, PTorsion, Anisotropic, Custom };

  Kind kind = Kind::Custom;
  std::string name;

  std::function<double(const Vec2&)> f;
  std::function<Vec2(const Vec2&)> grad_f;
  std::function<Mat2(const Vec2&)> hess_f;
  std::function<double(double)> g;
  std::function<double(double)> dg;
  std::function<double(double)> d2g;

  double m = 0.0;  // lower bound of the smallest eigenvalue of hess_f
  double k = 0.0;  // lower bound of d2g
  bool g_linear = false;  // g(v) = -lambda v
  double lambda = 0.0;
  std::optional<double> p;  // p-torsion exponent
  double delta = 0.0;       // p-torsion regularization
  Mat2 A = Mat2::Identity();

  std::function<double(const Vec2&)> f_conjugate;  // empty when unavailable
  std::function<double(double)> g_conjugate;       // empty when unavailable or an indicator

  bool has_f_conjugate() const { return static_cast<bool>(f_conjugate); }
};

/// Torsional rigidity: f(z) = |z|^2/2, g(v) = -lambda v.
inline ConvexPair make_torsion(double lambda) {
  ConvexPair pair;
  pair.kind = ConvexPair::Kind::Torsion;
  pair.name = "torsion";
  pair.f = [](const Vec2& z) { return 0.5 * z.squaredNorm(); };
  pair.grad_f = [](const Vec2& z) { return z; };
  pair.hess_f = [](const Vec2&) { return Mat2::Identity().eval(); };
  pair.g = [lambda](double v) { return -lambda * v; };
  pair.dg = [lambda](double) { return -lambda; };
  pair.d2g = [](double) { return 0.0; };
  pair.m = 1.0;
  pair.k = 0.0;
  pair.g_linear = true;
  pair.lambda = lambda;
  pair.f_conjugate = [](const Vec2& s) { return 0.5 * s.squaredNorm(); };
  return pair;
}

/// p-torsion with regularized density f(z) = (delta^2 + |z|^2)^{p/2} / p and
/// g(v) = -lambda v. delta = 0 gives the exact |z|^p / p and its conjugate
/// |s|^{p'} / p'.
inline ConvexPair make_p_torsion(double p, double lambda, double delta = 1e-4) {
  if (!(p >= 2.0)) fail(ErrorCode::InvalidArgument, "p-torsion needs p >= 2");
  if (!(delta >= 0.0)) fail(ErrorCode::InvalidArgument, "p-torsion regularization must be >= 0");
  ConvexPair pair;
  pair.kind = ConvexPair::Kind::PTorsion;
  pair.name = "p_torsion";
  const double d2 = delta * delta;
  pair.f = [p, d2](const Vec2& z) { return std::pow(d2 + z.squaredNorm(), 0.5 * p) / p; };
  pair.grad_f = [p, d2](const Vec2& z) { return Vec2(std::pow(d2 + z.squaredNorm(), 0.5 * p - 1.0) * z); };
  pair.hess_f = [p, d2](const Vec2& z) -> Mat2 {
    const double s = d2 + z.squaredNorm();
    if (s == 0.0) return p == 2.0 ? Mat2(Mat2::Identity()) : Mat2(Mat2::Zero());
    if (d2 == 0.0) {
      // |z|^{p-2} (I + (p-2) e e^T), e = z/|z|
      const double r = std::sqrt(s);
      const Vec2 e = z / r;
      return std::pow(r, p - 2.0) * (Mat2::Identity() + (p - 2.0) * outer(e, e));
    }
    return std::pow(s, 0.5 * p - 1.0) * Mat2::Identity() + (p - 2.0) * std::pow(s, 0.5 * p - 2.0) * outer(z, z);
  };
  pair.g = [lambda](double v) { return -lambda * v; };
  pair.dg = [lambda](double) { return -lambda; };
  pair.d2g = [](double) { return 0.0; };
  pair.m = delta > 0.0 ? std::pow(delta, p - 2.0) : (p == 2.0 ? 1.0 : 0.0);
  pair.k = 0.0;
  pair.g_linear = true;
  pair.lambda = lambda;
  pair.p = p;
  pair.delta = delta;
  if (delta == 0.0) {
    const double q = p / (p - 1.0);
    pair.f_conjugate = [q](const Vec2& s) { return std::pow(s.norm(), q) / q; };
  }
  return pair;
}

inline bool is_spd(const Mat2& a) {
  if (!a.allFinite() || std::abs(a(0, 1) - a(1, 0)) > 1e-14 * (a.norm() + 1.0)) return false;
  return a(0, 0) > 0.0 && a.determinant() > 0.0;
}

/// Strongly convex quadratic pair f(z) = <Az, z>/2, g(v) = k v^2/2 - lambda v.
inline ConvexPair make_anisotropic(const Mat2& A, double k, double lambda) {
  if (!is_spd(A)) fail(ErrorCode::InvalidArgument, "anisotropic pair needs a symmetric positive definite A");
  if (!(k > 0.0)) fail(ErrorCode::InvalidArgument, "anisotropic pair needs k > 0");
  ConvexPair pair;
  pair.kind = ConvexPair::Kind::Anisotropic;
  pair.name = "anisotropic";
  const Mat2 Ainv = A.inverse();
  pair.f = [A](const Vec2& z) { return 0.5 * z.dot(A * z); };
  pair.grad_f = [A](const Vec2& z) { return Vec2(A * z); };
  pair.hess_f = [A](const Vec2&) { return A; };
  pair.g = [k, lambda](double v) { return 0.5 * k * v * v - lambda * v; };
  pair.dg = [k, lambda](double v) { return k * v - lambda; };
  pair.d2g = [k](double) { return k; };
  pair.m = Eigen::SelfAdjointEigenSolver<Mat2>(A).eigenvalues().minCoeff();
  pair.k = k;
  pair.lambda = lambda;
  pair.A = A;
  pair.f_conjugate = [Ainv](const Vec2& s) { return 0.5 * s.dot(Ainv * s); };
  pair.g_conjugate = [k, lambda](double t) { return (t + lambda) * (t + lambda) / (2.0 * k); };
  return pair;
}

/// The pair the shape-derivative formulas are evaluated with: p-torsion drops
/// its solver regularization, everything else is returned unchanged.
inline ConvexPair for_derivatives(const ConvexPair& pair) {
  if (pair.kind == ConvexPair::Kind::PTorsion && pair.delta != 0.0) return make_p_torsion(*pair.p, pair.lambda, 0.0);
  return pair;
}

/// Conjugate of the quadratic form Q_A(z) = <Az, z>/2 is Q_{A^{-1}}; returns A^{-1}.
inline Mat2 fenchel_quadratic_conjugate(const Mat2& A) {
  if (!is_spd(A)) fail(ErrorCode::InvalidArgument, "quadratic conjugate needs a symmetric positive definite matrix");
  return A.inverse();
}

/// Pointwise data of the quadratic form w -> int <M grad w, grad w> + s w^2:
/// M houses hess_f(grad u) and s houses g''(u) at each quadrature point.
struct QuadraticFormSpec {
  std::function<Mat2(const ElementPoint&)> matrix_field;
  std::function<double(const ElementPoint&)> scalar_field;
};

}  // namespace shapehess
