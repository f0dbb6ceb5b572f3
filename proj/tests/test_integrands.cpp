#include "shapehess/integrands.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace shapehess;

namespace {

std::vector<ConvexPair> builtin_pairs() {
  Mat2 a;
  a << 2.0, 0.5, 0.5, 1.0;
  return {make_torsion(1.3), make_p_torsion(3.0, 1.0, 1e-4), make_p_torsion(3.0, 1.0, 0.0),
          make_p_torsion(4.5, 0.7, 0.1), make_anisotropic(a, 2.0, 0.4)};
}

}  // namespace

TEST(Torsion, Evaluations) {
  const auto t = make_torsion(1.0);
  EXPECT_DOUBLE_EQ(t.f(Vec2(3, 4)), 12.5);
  EXPECT_EQ(t.grad_f(Vec2(1, 0)), Vec2(1, 0));
  EXPECT_EQ(t.hess_f(Vec2(0.3, 7)), Mat2::Identity());
  EXPECT_DOUBLE_EQ(t.g(2.0), -2.0);
  EXPECT_TRUE(t.g_linear);
  EXPECT_EQ(t.m, 1.0);
  EXPECT_EQ(t.k, 0.0);
}

TEST(PTorsion, ReducesToTorsionAtTwo) {
  const auto p = make_p_torsion(2.0, 1.5, 0.0);
  const auto t = make_torsion(1.5);
  std::mt19937 rng(1);
  std::normal_distribution<double> n;
  for (int k = 0; k < 20; ++k) {
    const Vec2 z(n(rng), n(rng));
    EXPECT_NEAR(p.f(z), t.f(z), 1e-14 * (1 + t.f(z)));
    EXPECT_LT((p.grad_f(z) - t.grad_f(z)).norm(), 1e-14 * (1 + z.norm()));
    EXPECT_LT((p.hess_f(z) - t.hess_f(z)).norm(), 1e-14);
    EXPECT_DOUBLE_EQ(p.g(z.x()), t.g(z.x()));
  }
}

TEST(PTorsion, HessianExamples) {
  const auto p = make_p_torsion(3.0, 1.0, 0.0);
  Mat2 expect;
  expect << 2, 0, 0, 1;
  EXPECT_LT((p.hess_f(Vec2(1, 0)) - expect).norm(), 1e-15);
  EXPECT_EQ(p.hess_f(Vec2(0, 0)), Mat2::Zero());
}

TEST(PTorsion, RegularizationRestoresStrongConvexity) {
  // At z = 0 the regularized Hessian is delta^{p-2} I.
  for (double p : {2.5, 3.0, 4.0}) {
    const double delta = 1e-2;
    const auto pair = make_p_torsion(p, 1.0, delta);
    const Mat2 h = pair.hess_f(Vec2::Zero());
    EXPECT_NEAR(h(0, 0), std::pow(delta, p - 2.0), 1e-15);
    EXPECT_NEAR(h(1, 1), std::pow(delta, p - 2.0), 1e-15);
    EXPECT_NEAR(pair.m, std::pow(delta, p - 2.0), 1e-15);
  }
}

TEST(PTorsion, RejectsSmallExponent) { EXPECT_THROW(make_p_torsion(1.5, 1.0), Error); }

TEST(Anisotropic, Evaluations) {
  const auto id = make_anisotropic(Mat2::Identity(), 1.0, 0.0);
  EXPECT_DOUBLE_EQ(id.f(Vec2(1, 2)), 2.5);
  EXPECT_DOUBLE_EQ(id.g(3.0), 4.5);
  Mat2 d = Mat2::Zero();
  d(0, 0) = 2.0;
  d(1, 1) = 1.0;
  const auto a = make_anisotropic(d, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(a.f(Vec2(1, 1)), 1.5);
  EXPECT_DOUBLE_EQ(a.f_conjugate(Vec2(2, 0)), 1.0);
  EXPECT_EQ(a.g(0.0), 0.0);
  Mat2 bad;
  bad << 1, 2, 2, 1;
  EXPECT_THROW(make_anisotropic(bad, 1.0, 0.0), Error);
  EXPECT_THROW(make_anisotropic(Mat2::Identity(), 0.0, 0.0), Error);
}

TEST(FenchelQuadraticConjugate, Examples) {
  EXPECT_EQ(fenchel_quadratic_conjugate(Mat2::Identity()), Mat2::Identity());
  Mat2 d = Mat2::Zero();
  d(0, 0) = 2.0;
  d(1, 1) = 1.0;
  Mat2 di = Mat2::Zero();
  di(0, 0) = 0.5;
  di(1, 1) = 1.0;
  EXPECT_LT((fenchel_quadratic_conjugate(d) - di).norm(), 1e-15);
  Mat2 a;
  a << 2, 1, 1, 2;
  Mat2 ai;
  ai << 2, -1, -1, 2;
  EXPECT_LT((fenchel_quadratic_conjugate(a) - ai / 3.0).norm(), 1e-15);
  EXPECT_THROW(fenchel_quadratic_conjugate(Mat2::Zero()), Error);
}

TEST(ConvexPair, DerivativesMatchFiniteDifferences) {
  std::mt19937 rng(42);
  std::normal_distribution<double> n;
  const double h = 1e-5;
  for (const auto& pair : builtin_pairs()) {
    for (int k = 0; k < 100; ++k) {
      const Vec2 z(n(rng), n(rng));
      Vec2 fd_grad;
      Mat2 fd_hess;
      for (int j = 0; j < 2; ++j) {
        Vec2 e = Vec2::Zero();
        e[j] = h;
        fd_grad[j] = (pair.f(z + e) - pair.f(z - e)) / (2 * h);
        fd_hess.col(j) = (pair.grad_f(z + e) - pair.grad_f(z - e)) / (2 * h);
      }
      const double scale = 1.0 + pair.grad_f(z).norm() + pair.hess_f(z).norm();
      EXPECT_LT((fd_grad - pair.grad_f(z)).norm(), 1e-6 * scale) << pair.name;
      EXPECT_LT((fd_hess - pair.hess_f(z)).norm(), 1e-6 * scale) << pair.name;
      const Mat2 hs = pair.hess_f(z);
      EXPECT_EQ(hs(0, 1), hs(1, 0));
      EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat2>(hs).eigenvalues().minCoeff(), pair.m * (1 - 1e-12) - 1e-15);
      const double v = n(rng);
      EXPECT_NEAR((pair.g(v + h) - pair.g(v - h)) / (2 * h), pair.dg(v), 1e-6 * (1 + std::abs(v)));
      EXPECT_NEAR((pair.dg(v + h) - pair.dg(v - h)) / (2 * h), pair.d2g(v), 1e-6);
      EXPECT_GE(pair.d2g(v), pair.k);
    }
    EXPECT_EQ(pair.g(0.0), 0.0);
    EXPECT_LT(pair.grad_f(Vec2::Zero()).norm(), 1e-300);
  }
}

TEST(ConvexPair, FenchelYoungEquality) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n;
  for (const auto& pair : builtin_pairs()) {
    if (!pair.has_f_conjugate()) continue;
    for (int k = 0; k < 100; ++k) {
      const Vec2 z(n(rng), n(rng));
      const Vec2 s = pair.grad_f(z);
      const double lhs = pair.f(z) + pair.f_conjugate(s);
      const double rhs = z.dot(s);
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs))) << pair.name;
    }
  }
  EXPECT_FALSE(make_p_torsion(3.0, 1.0, 1e-4).has_f_conjugate());
  EXPECT_TRUE(for_derivatives(make_p_torsion(3.0, 1.0, 1e-4)).has_f_conjugate());
}

TEST(ConvexPair, AnisotropicGConjugate) {
  // g*(t) = sup_v tv - g(v) checked by the Fenchel-Young equality at t = g'(v).
  const auto a = make_anisotropic(Mat2::Identity(), 2.5, 0.7);
  for (double v : {-1.0, 0.0, 0.3, 2.0}) {
    const double t = a.dg(v);
    EXPECT_NEAR(a.g(v) + a.g_conjugate(t), t * v, 1e-14);
  }
}
