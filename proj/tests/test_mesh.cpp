#include "shapehess/deformation.hpp"
#include "shapehess/mesh.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace shapehess;

namespace {

// Shoelace area of the boundary polygon(s): an independent oracle for the triangle-area sum.
double shoelace(const Mesh2D& mesh) {
  double a = 0.0;
  for (const auto& e : mesh.boundary_edges()) a += 0.5 * cross(mesh.vertices()[e.v[0]], mesh.vertices()[e.v[1]]);
  return a;
}

}  // namespace

TEST(GenerateDisk, PureDirichletPerimeter) {
  const Mesh2D mesh = generate_disk(1.0, 0.1, 1.0);
  for (const auto& e : mesh.boundary_edges()) EXPECT_EQ(e.tag, BoundaryTag::Dirichlet);
  const double n = static_cast<double>(mesh.boundary_edges().size());
  const double inscribed = 2.0 * n * std::sin(kPi / n);
  EXPECT_NEAR(mesh.boundary_length(), inscribed, 1e-12);
  EXPECT_NEAR(mesh.boundary_length(), 2.0 * kPi, 0.1 * 0.1);
}

TEST(GenerateDisk, HalfNeumann) {
  const Mesh2D mesh = generate_disk(1.0, 0.1, 0.5);
  EXPECT_TRUE(mesh.has_neumann());
  EXPECT_NEAR(mesh.boundary_length(TagFilter::Neumann), 0.5 * mesh.boundary_length(), 1e-12);
  EXPECT_NEAR(mesh.boundary_length(TagFilter::Dirichlet) + mesh.boundary_length(TagFilter::Neumann),
              mesh.boundary_length(), 1e-12);
  for (const auto& e : mesh.boundary_edges()) {
    const Vec2 mid = 0.5 * (mesh.vertices()[e.v[0]] + mesh.vertices()[e.v[1]]);
    EXPECT_EQ(e.tag == BoundaryTag::Neumann, mid.y() < 0.0) << mid.transpose();
  }
}

TEST(GenerateDisk, AreaMatchesInscribedPolygon) {
  const Mesh2D mesh = generate_disk(2.0, 0.2, 1.0);
  const double n = static_cast<double>(mesh.boundary_edges().size());
  const double polygon = 0.5 * n * 4.0 * std::sin(2.0 * kPi / n);
  EXPECT_NEAR(mesh.area(), polygon, 1e-12);
  EXPECT_NEAR(mesh.area(), shoelace(mesh), 1e-12);
  EXPECT_NEAR(mesh.area(), 4.0 * kPi, 0.2 * 0.2 * 4.0);
}

TEST(GenerateDisk, RejectsDegenerateParameters) {
  EXPECT_THROW(generate_disk(0.0, 0.1), Error);
  EXPECT_THROW(generate_disk(1.0, 1.5), Error);
  EXPECT_THROW(generate_disk(1.0, 0.1, 0.0), Error);
  EXPECT_THROW(generate_disk(1.0, 0.1, 1.5), Error);
}

TEST(Mesh, InvariantsOnGenerators) {
  for (const Mesh2D& mesh : {generate_disk(1.0, 0.15, 0.5), generate_annulus(0.5, 1.0, 0.1),
                             generate_rectangle(1.0, 2.0, 0.25, {"left", "bottom"}), generate_ellipse(1.5, 1.0, 0.2)}) {
    for (int t = 0; t < mesh.num_triangles(); ++t) EXPECT_GT(mesh.signed_area(t), 0.0);
    EXPECT_NEAR(mesh.area(), shoelace(mesh), 1e-12 * mesh.area());
    // Euler characteristic: V - E + F = 2 - (number of holes) - 1 for a planar domain counted without the outer face
    int interior_edges = 0;
    for (char b : mesh.edge_on_boundary()) interior_edges += b ? 0 : 1;
    EXPECT_EQ(2 * interior_edges + static_cast<int>(mesh.boundary_edges().size()), 3 * mesh.num_triangles());
    // boundary edges are oriented with the owning triangle
    for (std::size_t b = 0; b < mesh.boundary_edges().size(); ++b) {
      const auto& info = mesh.boundary_info()[b];
      const auto& tri = mesh.triangles()[info.triangle];
      EXPECT_EQ(mesh.boundary_edges()[b].v[0], tri[info.local_edge]);
      EXPECT_EQ(mesh.boundary_edges()[b].v[1], tri[(info.local_edge + 1) % 3]);
    }
  }
}

TEST(Mesh, RejectsMissingDirichlet) {
  EXPECT_THROW(generate_rectangle(1.0, 1.0, 0.5, {}), Error);
}

TEST(Mesh, RejectsUntaggedAndDuplicateEdges) {
  std::vector<Vec2> v{{0, 0}, {1, 0}, {0, 1}};
  std::vector<std::array<int, 3>> t{{0, 1, 2}};
  EXPECT_THROW(Mesh2D(v, t, {{{0, 1}, BoundaryTag::Dirichlet}, {{1, 2}, BoundaryTag::Dirichlet}}), Error);
  EXPECT_THROW(Mesh2D(v, t,
                      {{{0, 1}, BoundaryTag::Dirichlet},
                       {{1, 2}, BoundaryTag::Dirichlet},
                       {{2, 0}, BoundaryTag::Dirichlet},
                       {{1, 0}, BoundaryTag::Neumann}}),
               Error);
  std::vector<std::array<int, 3>> flipped{{0, 2, 1}};
  try {
    Mesh2D bad(v, flipped, {{{0, 1}, BoundaryTag::Dirichlet}, {{1, 2}, BoundaryTag::Dirichlet}, {{2, 0}, BoundaryTag::Dirichlet}});
    FAIL() << "inverted triangle accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvertedElement);
  }
}

TEST(Mesh, P2MidpointTable) {
  const Mesh2D mesh = generate_disk(1.0, 0.2);
  EXPECT_EQ(mesh.num_p2_nodes(), mesh.num_vertices() + mesh.num_edges());
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto nodes = mesh.element_nodes(t);
    const auto& tri = mesh.triangles()[t];
    for (int e = 0; e < 3; ++e) {
      const Vec2 mid = 0.5 * (mesh.vertices()[tri[e]] + mesh.vertices()[tri[(e + 1) % 3]]);
      EXPECT_LT((mesh.node(nodes[3 + e]) - mid).norm(), 1e-15);
    }
  }
}

TEST(Deform, ZeroFieldAndZeroEpsAreIdentity) {
  const Mesh2D mesh = generate_disk(1.0, 0.2);
  const Mesh2D a = deform(mesh, fields::zero(), 0.3);
  const Mesh2D b = deform(mesh, fields::radial_bump(Vec2(0.1, 0.2), 0.5), 0.0);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    EXPECT_EQ(a.vertices()[i], mesh.vertices()[i]);
    EXPECT_EQ(b.vertices()[i], mesh.vertices()[i]);
  }
}

TEST(Deform, TranslationKeepsAreas) {
  const Mesh2D mesh = generate_disk(1.0, 0.2, 0.5);
  const Vec2 c(0.3, -1.2);
  const Mesh2D moved = deform(mesh, fields::constant(c), 0.1);
  for (int i = 0; i < mesh.num_vertices(); ++i)
    EXPECT_LT((moved.vertices()[i] - mesh.vertices()[i] - 0.1 * c).norm(), 1e-15);
  for (int t = 0; t < mesh.num_triangles(); ++t) EXPECT_NEAR(moved.signed_area(t), mesh.signed_area(t), 1e-15);
  for (std::size_t b = 0; b < mesh.boundary_edges().size(); ++b)
    EXPECT_EQ(moved.boundary_edges()[b].tag, mesh.boundary_edges()[b].tag);
}

TEST(Deform, TranslationComposes) {
  const Mesh2D mesh = generate_disk(1.0, 0.3);
  const auto c = fields::constant(Vec2(0.25, 0.5));
  const Mesh2D twice = deform(deform(mesh, c, 0.5), c, 0.25);
  const Mesh2D once = deform(mesh, c, 0.75);
  for (int i = 0; i < mesh.num_vertices(); ++i) EXPECT_LT((twice.vertices()[i] - once.vertices()[i]).norm(), 1e-15);
}

TEST(Deform, DilationScalesArea) {
  const Mesh2D mesh = generate_disk(1.0, 0.1);
  const Mesh2D big = deform(mesh, fields::dilation(), 0.1);
  for (int i = 0; i < mesh.num_vertices(); ++i)
    EXPECT_LT((big.vertices()[i] - 1.1 * mesh.vertices()[i]).norm(), 1e-15);
  EXPECT_NEAR(big.area(), 1.21 * mesh.area(), 1e-12);
}

TEST(Deform, AffineAreaMatchesDeterminantExpansion) {
  // For affine V the Jacobian determinant 1 + eps tr DV + eps^2 det DV is constant.
  const Mesh2D mesh = generate_rectangle(1.0, 1.0, 0.2, {"left"});
  Mat2 d;
  d << 0.3, -0.7, 0.4, 0.2;
  const auto v = DeformationField::analytic([d](const Vec2& x) { return Vec2(d * x + Vec2(1, 2)); },
                                            [d](const Vec2&) { return d; }, "affine");
  const double eps = 0.35;
  const Mesh2D moved = deform(mesh, v, eps);
  const auto [a1, a2] = jacobian_invariants(d);
  EXPECT_NEAR(moved.area(), mesh.area() * (1.0 + eps * a1 + eps * eps * a2), 1e-14);
}

TEST(Deform, InversionIsReported) {
  const Mesh2D mesh = generate_disk(1.0, 0.2);
  try {
    const auto squash = DeformationField::analytic([](const Vec2& x) { return Vec2(x.x(), 0.0); },
                                                   [](const Vec2&) { return Mat2(Vec2(1.0, 0.0).asDiagonal()); }, "squash");
    deform(mesh, squash, -1.5);
    FAIL() << "inverted mesh accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvertedElement);
  }
}

TEST(JacobianInvariants, Examples) {
  EXPECT_EQ(jacobian_invariants(Mat2::Identity()), std::make_pair(2.0, 1.0));
  EXPECT_EQ(jacobian_invariants(Mat2::Zero()), std::make_pair(0.0, 0.0));
  Mat2 m;
  m << 1, 2, 3, 4;
  const auto [a1, a2] = jacobian_invariants(m);
  EXPECT_DOUBLE_EQ(a1, 5.0);
  EXPECT_NEAR(a2, -2.0, 1e-15);
}

TEST(DeformationField, AnalyticJacobiansMatchCentralDifferences) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  const std::vector<DeformationField> all = {
      fields::dilation(1.3, Vec2(0.1, 0.2)), fields::spin(0.7), fields::radial_bump(Vec2(0.1, -0.1), 0.8, 1.5),
      fields::polynomial({0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.1, -0.2, 0.3}, {0, 1, 0, 0.5, 0, 0.25, -1, 0, 0.3}),
      fields::ellipse_normal(1.5, 1.0), fields::annulus_normal(0.5, 1.0)};
  for (const auto& v : all) {
    double err_h = 0.0, err_h2 = 0.0;
    for (int k = 0; k < 50; ++k) {
      Vec2 x(u(rng), u(rng));
      if (x.norm() < 0.3) x = x.normalized() * (0.3 + x.norm());
      err_h = std::max(err_h, (v.central_difference_jacobian(x, 1e-2) - v.jacobian(x)).cwiseAbs().maxCoeff());
      err_h2 = std::max(err_h2, (v.central_difference_jacobian(x, 5e-3) - v.jacobian(x)).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(err_h, 5e-3) << v.name();
    // second-order: halving the step divides the error by about four
    if (err_h > 1e-12) EXPECT_LT(err_h2, 0.3 * err_h) << v.name();
  }
}

TEST(DeformationField, FdKindAgreesWithAnalytic) {
  const auto a = fields::radial_bump(Vec2(0, 0), 0.9);
  const auto fd = DeformationField::fd_jacobian([a](const Vec2& x) { return a.value(x); }, 1e-5, "fd");
  const Vec2 x(0.3, -0.2);
  EXPECT_LT((fd.jacobian(x) - a.jacobian(x)).norm(), 1e-8);
  EXPECT_EQ(fd.kind(), DeformationField::Kind::FdJacobian);
}

TEST(DeformationField, ScalingAndSum) {
  const auto s = fields::spin().scaled(2.0) + fields::dilation();
  const Vec2 x(1.0, 2.0);
  EXPECT_LT((s.value(x) - Vec2(-4.0 + 1.0, 2.0 + 2.0)).norm(), 1e-15);
  Mat2 expect;
  expect << 1, -2, 2, 1;
  EXPECT_LT((s.jacobian(x) - expect).norm(), 1e-15);
}

TEST(DeformationField, NormalPresetsAreUnitNormals) {
  const auto e = fields::ellipse_normal(1.0, 1.0);
  EXPECT_LT((e.value(Vec2(0.6, 0.8)) - Vec2(0.6, 0.8)).norm(), 1e-15);
  const auto an = fields::annulus_normal(0.5, 1.0);
  EXPECT_LT((an.value(Vec2(0.0, 1.0)) - Vec2(0.0, 1.0)).norm(), 1e-15);
  EXPECT_LT((an.value(Vec2(0.5, 0.0)) - Vec2(-1.0, 0.0)).norm(), 1e-15);
}

TEST(MeshIo, RoundTrip) {
  const Mesh2D mesh = generate_disk(1.0, 0.3, 0.5);
  std::stringstream ss;
  write_mesh(ss, mesh);
  const Mesh2D back = read_mesh(ss);
  ASSERT_EQ(back.num_vertices(), mesh.num_vertices());
  ASSERT_EQ(back.num_triangles(), mesh.num_triangles());
  for (int i = 0; i < mesh.num_vertices(); ++i) EXPECT_EQ(back.vertices()[i], mesh.vertices()[i]);
  for (std::size_t b = 0; b < mesh.boundary_edges().size(); ++b) {
    EXPECT_EQ(back.boundary_edges()[b].v, mesh.boundary_edges()[b].v);
    EXPECT_EQ(back.boundary_edges()[b].tag, mesh.boundary_edges()[b].tag);
  }
}

TEST(MeshIo, RejectsBadInput) {
  std::stringstream bad_header("mesh v0\n");
  EXPECT_THROW(read_mesh(bad_header), Error);
  std::stringstream bad_tag("shapehess-mesh v1\nvertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 2\nboundary 3\n0 1 D\n1 2 X\n2 0 D\n");
  EXPECT_THROW(read_mesh(bad_tag), Error);
}
