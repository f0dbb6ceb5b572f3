#include "shapehess/boundary_geometry.hpp"
#include "shapehess/solver.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace shapehess;

namespace {

MeshPtr shared(Mesh2D m) { return std::make_shared<const Mesh2D>(std::move(m)); }

// p-torsion on the unit disk: u(r) = (lambda/2)^{1/(p-1)} (p-1)/p (1 - r^{p/(p-1)}),
// J = (1 - 1/p) int |grad u|^p = 2 pi (1 - 1/p) int_0^1 (lambda r/2)^{p/(p-1)} r dr.
double p_torsion_disk_J(double p, double lambda) {
  const double q = p / (p - 1.0);
  return 2.0 * kPi * (1.0 - 1.0 / p) * std::pow(0.5 * lambda, q) / (q + 2.0);
}

}  // namespace

TEST(SolveState, DiskTorsion) {
  const auto mesh = shared(generate_disk(1.0, 0.05));
  const auto s = solve_state(mesh, make_torsion(1.0));
  EXPECT_NEAR(s.J_value, kPi / 16.0, 5e-3 * kPi / 16.0);
  EXPECT_NEAR(s.u.values.maxCoeff(), 0.25, 1e-3);
  EXPECT_LE(s.newton.iterations, 1);
  EXPECT_GE(s.u.values.minCoeff(), -1e-14);
  // J = -min energy
  EXPECT_NEAR(s.J_value, -assemble_energy(*mesh, s.pair, s.u), 1e-15);
}

TEST(SolveState, ZeroSource) {
  const auto mesh = shared(generate_disk(1.0, 0.2, 0.5));
  const auto s = solve_state(mesh, make_torsion(0.0));
  EXPECT_EQ(s.J_value, 0.0);
  EXPECT_EQ(s.u.values.norm(), 0.0);
  EXPECT_LE(s.newton.iterations, 1);
}

TEST(SolveState, PTorsionDisk) {
  const auto mesh = shared(generate_disk(1.0, 0.05));
  const auto s = solve_state(mesh, make_p_torsion(3.0, 1.0, 1e-4));
  EXPECT_NEAR(p_torsion_disk_J(3.0, 1.0), 2.0 * kPi * std::sqrt(2.0) / 21.0, 1e-14);
  EXPECT_NEAR(s.J_value, 2.0 * kPi * std::sqrt(2.0) / 21.0, 1e-2 * 0.4231);
  EXPECT_NEAR(s.u.values.maxCoeff(), std::sqrt(2.0) / 3.0, 5e-3);
  EXPECT_LT(s.newton.iterations, 25);
  // energy decreases monotonically along the iterations
  for (std::size_t k = 1; k < s.newton.energies.size(); ++k)
    EXPECT_LE(s.newton.energies[k], s.newton.energies[k - 1] + 1e-14 * std::abs(s.newton.energies[k - 1]));
}

TEST(SolveState, PTwoMatchesTorsion) {
  const auto mesh = shared(generate_disk(1.0, 0.1, 0.5));
  const auto a = solve_state(mesh, make_torsion(1.0));
  const auto b = solve_state(mesh, make_p_torsion(2.0, 1.0, 0.0));
  EXPECT_NEAR(a.J_value, b.J_value, 1e-12);
}

TEST(SolveState, LinearScaling) {
  const auto mesh = shared(generate_disk(1.0, 0.1, 0.5));
  const auto a = solve_state(mesh, make_torsion(1.0));
  const auto b = solve_state(mesh, make_torsion(2.0));
  EXPECT_LT((b.u.values - 2.0 * a.u.values).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_NEAR(b.J_value, 4.0 * a.J_value, 1e-13);
}

TEST(SolveState, UniquenessFromRandomStart) {
  const auto mesh = shared(generate_disk(1.0, 0.15, 0.5));
  Mat2 a;
  a << 2.0, 0.4, 0.4, 1.0;
  for (const auto& pair : {make_anisotropic(a, 1.5, 1.0), make_p_torsion(3.0, 1.0, 1e-3)}) {
    const auto s0 = solve_state(mesh, pair);
    std::mt19937 rng(4);
    std::normal_distribution<double> n;
    Vector init(mesh->num_p2_nodes());
    for (int i = 0; i < init.size(); ++i) init[i] = 0.2 * n(rng);
    SolveOptions opt;
    opt.initial = init;
    const auto s1 = solve_state(mesh, pair, opt);
    const Vector d = s1.u.values - s0.u.values;
    const double h1 = std::sqrt(d.dot((assemble_stiffness(*mesh) + assemble_mass(*mesh)) * d));
    EXPECT_LT(h1, 10 * opt.tol + 1e-9) << pair.name;
  }
}

TEST(SolveState, NoConvergenceReported) {
  const auto mesh = shared(generate_disk(1.0, 0.2));
  SolveOptions opt;
  opt.max_iter = 1;
  try {
    solve_state(mesh, make_p_torsion(4.0, 1.0, 1e-4), opt);
    FAIL() << "expected NO_CONVERGENCE";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }
}

TEST(OptimalityDiagnostics, PureDirichletDisk) {
  const auto mesh = shared(generate_disk(1.0, 0.05));
  const auto s = solve_state(mesh, make_torsion(1.0));
  const auto d = optimality_diagnostics(s);
  EXPECT_LT(d.el_residual, 1e-10);
  EXPECT_EQ(d.neumann_flux, 0.0);
  ASSERT_TRUE(d.duality_gap.has_value());
  EXPECT_LT(*d.duality_gap, 1e-3);
  ASSERT_TRUE(d.feasibility.has_value());
}

TEST(OptimalityDiagnostics, AnisotropicDualityGapConverges) {
  // The g* term sees div sigma of the recovered gradient, which is only first-order accurate.
  Mat2 a;
  a << 2.0, 0.4, 0.4, 1.0;
  std::vector<double> gaps;
  for (double h : {0.1, 0.05}) {
    const auto s = solve_state(shared(generate_disk(1.0, h)), make_anisotropic(a, 1.5, 1.0));
    const auto d = optimality_diagnostics(s);
    ASSERT_TRUE(d.duality_gap.has_value());
    EXPECT_FALSE(d.feasibility.has_value());
    gaps.push_back(*d.duality_gap);
  }
  EXPECT_LT(gaps[1], 0.1);
  EXPECT_GT(std::log2(gaps[0] / gaps[1]), 0.8);
}

TEST(OptimalityDiagnostics, NeumannFluxOnSmoothNeumannBoundary) {
  // Annulus with a Neumann inner circle: no Dirichlet/Neumann junction, so sigma is smooth up to Gamma_N.
  std::vector<double> flux;
  for (double h : {0.1, 0.05}) {
    const auto s = solve_state(shared(generate_annulus(0.5, 1.0, h)), make_torsion(1.0));
    flux.push_back(optimality_diagnostics(s).neumann_flux);
  }
  EXPECT_LT(flux[1], 1e-2);
  EXPECT_GE(std::log2(flux[0] / flux[1]), 1.0);
}

TEST(OptimalityDiagnostics, NeumannFluxHalfNeumannDisk) {
  // The junction singularity (u ~ r^{1/2}) limits the pointwise trace to order h^{1/2}.
  std::vector<double> flux;
  for (double h : {0.1, 0.05}) {
    const auto s = solve_state(shared(generate_disk(1.0, h, 0.5)), make_torsion(1.0));
    flux.push_back(optimality_diagnostics(s).neumann_flux);
  }
  EXPECT_LT(flux[1], flux[0]);
  EXPECT_GT(std::log2(flux[0] / flux[1]), 0.3);
}

TEST(InteriorHessian, BoundedUnderRefinement) {
  std::vector<double> norms;
  for (double h : {0.1, 0.05}) {
    const auto s = solve_state(shared(generate_disk(1.0, h, 0.5)), make_torsion(1.0));
    norms.push_back(interior_hessian_l2(s, 0.2));
  }
  EXPECT_NEAR(norms[1], norms[0], 0.05 * norms[0]);
}

TEST(BoundaryGeometry, CircleNormalsAndCurvature) {
  const Mesh2D mesh = generate_disk(2.0, 0.1, 0.5);
  const BoundaryGeometry geo(mesh);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    if (!mesh.vertex_on_boundary()[i]) continue;
    EXPECT_LT((geo.vertex_normal(i) - mesh.vertices()[i] / 2.0).norm(), 1e-14);
    EXPECT_NEAR(geo.vertex_curvature(i), 0.5, 1e-3);
  }
  const Mesh2D ann = generate_annulus(0.5, 1.0, 0.1);
  const BoundaryGeometry ga(ann);
  for (int i = 0; i < ann.num_vertices(); ++i) {
    if (!ann.vertex_on_boundary()[i]) continue;
    const double r = ann.vertices()[i].norm();
    const double sign = r < 0.75 ? -1.0 : 1.0;
    EXPECT_LT((ga.vertex_normal(i) - sign * ann.vertices()[i] / r).norm(), 1e-14);
    EXPECT_NEAR(ga.vertex_curvature(i), sign / r, 1e-2);
  }
}
