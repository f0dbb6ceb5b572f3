#pragma once

#include "shapehess/error.hpp"
#include "shapehess/integrands.hpp"
#include "shapehess/mesh.hpp"
#include "shapehess/parallel.hpp"
#include "shapehess/types.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace shapehess {

using SparseSpd = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Quadrature

struct QuadPoint {
  Eigen::Vector3d bary;
  double weight;  // reference-triangle weight; weights sum to 1/2
};

namespace detail {

inline void add_orbit3(std::vector<QuadPoint>& rule, double w, double a) {
  const double b = 0.5 * (1.0 - a);
  rule.push_back({Eigen::Vector3d(a, b, b), 0.5 * w});
  rule.push_back({Eigen::Vector3d(b, a, b), 0.5 * w});
  rule.push_back({Eigen::Vector3d(b, b, a), 0.5 * w});
}

inline void add_orbit6(std::vector<QuadPoint>& rule, double w, double a, double b) {
  const double c = 1.0 - a - b;
  const std::array<Eigen::Vector3d, 6> perms = {Eigen::Vector3d(a, b, c), Eigen::Vector3d(a, c, b),
                                                Eigen::Vector3d(b, a, c), Eigen::Vector3d(b, c, a),
                                                Eigen::Vector3d(c, a, b), Eigen::Vector3d(c, b, a)};
  for (const auto& p : perms) rule.push_back({p, 0.5 * w});
}

inline std::vector<QuadPoint> make_rule(int order) {
  std::vector<QuadPoint> rule;
  switch (order) {
    case 2:
      add_orbit3(rule, 1.0 / 3.0, 2.0 / 3.0);
      break;
    case 4:  // Dunavant, 6 points
      add_orbit3(rule, 0.223381589678011465696, 0.108103018168070227363);
      add_orbit3(rule, 0.109951743655321867638, 0.816847572980458513081);
      break;
    case 6:  // Dunavant, 12 points
      add_orbit3(rule, 0.116786275726379159661, 0.501426509658178903420);
      add_orbit3(rule, 0.0508449063702067532996, 0.873821971016995636556);
      add_orbit6(rule, 0.0828510756183737101863, 0.0531450498448170332392, 0.310352451033784272672);
      break;
    default:
      fail(ErrorCode::UnsupportedOrder, "quadrature order must be 2, 4 or 6");
  }
  return rule;
}

}  // namespace detail

/// Symmetric triangle rule exact for polynomials of the given degree (2, 4 or 6).
inline const std::vector<QuadPoint>& quadrature_rule(int order) {
  static const std::vector<QuadPoint> r2 = detail::make_rule(2);
  static const std::vector<QuadPoint> r4 = detail::make_rule(4);
  static const std::vector<QuadPoint> r6 = detail::make_rule(6);
  switch (order) {
    case 2: return r2;
    case 4: return r4;
    case 6: return r6;
    default: fail(ErrorCode::UnsupportedOrder, "quadrature order must be 2, 4 or 6");
  }
}

/// 3-point Gauss-Legendre on [0, 1]: (parameter, weight).
inline const std::array<std::pair<double, double>, 3>& edge_rule() {
  static const double d = 0.5 * std::sqrt(0.6);
  static const std::array<std::pair<double, double>, 3> rule = {
      std::pair{0.5 - d, 5.0 / 18.0}, std::pair{0.5, 8.0 / 18.0}, std::pair{0.5 + d, 5.0 / 18.0}};
  return rule;
}

// ---------------------------------------------------------------------------
// P2 basis, node order v0, v1, v2, m01, m12, m20

using P2Values = std::array<double, 6>;
using P2Gradients = std::array<Vec2, 6>;
using P2Hessians = std::array<Mat2, 6>;

inline P2Values p2_values(const Eigen::Vector3d& l) {
  return {l[0] * (2 * l[0] - 1), l[1] * (2 * l[1] - 1), l[2] * (2 * l[2] - 1),
          4 * l[0] * l[1],       4 * l[1] * l[2],       4 * l[2] * l[0]};
}

inline P2Gradients p2_gradients(const Eigen::Vector3d& l, const TriangleGeometry& g) {
  const auto& G = g.grad_lambda;
  return {(4 * l[0] - 1) * G[0],           (4 * l[1] - 1) * G[1],           (4 * l[2] - 1) * G[2],
          4 * (l[1] * G[0] + l[0] * G[1]), 4 * (l[2] * G[1] + l[1] * G[2]), 4 * (l[0] * G[2] + l[2] * G[0])};
}

inline P2Hessians p2_hessians(const TriangleGeometry& g) {
  const auto& G = g.grad_lambda;
  auto sym = [&](int a, int b) { return Mat2(4.0 * (outer(G[a], G[b]) + outer(G[b], G[a]))); };
  return {Mat2(4.0 * outer(G[0], G[0])), Mat2(4.0 * outer(G[1], G[1])), Mat2(4.0 * outer(G[2], G[2])),
          sym(0, 1), sym(1, 2), sym(2, 0)};
}

inline Vec2 bary_to_point(const Mesh2D& mesh, int t, const Eigen::Vector3d& l) {
  const auto& tri = mesh.triangles()[t];
  const auto& v = mesh.vertices();
  return l[0] * v[tri[0]] + l[1] * v[tri[1]] + l[2] * v[tri[2]];
}

// ---------------------------------------------------------------------------
// Degrees of freedom and finite-element functions

/// P2 dof layout: one dof per P2 node; Dirichlet dofs are the nodes on closed Gamma_D.
struct DofMap {
  int n_dofs = 0;
  std::vector<int> dirichlet_dofs;  // sorted
  std::vector<char> is_dirichlet;

  explicit DofMap(const Mesh2D& mesh) : n_dofs(mesh.num_p2_nodes()), is_dirichlet(n_dofs, 0) {
    const int nv = mesh.num_vertices();
    for (std::size_t b = 0; b < mesh.boundary_edges().size(); ++b) {
      const auto& e = mesh.boundary_edges()[b];
      if (e.tag != BoundaryTag::Dirichlet) continue;
      is_dirichlet[e.v[0]] = 1;
      is_dirichlet[e.v[1]] = 1;
      is_dirichlet[nv + mesh.boundary_info()[b].edge] = 1;
    }
    for (int i = 0; i < n_dofs; ++i)
      if (is_dirichlet[i]) dirichlet_dofs.push_back(i);
  }
};

/// Scalar P2 function on a mesh.
struct FEFunction {
  MeshPtr mesh;
  Vector values;

  FEFunction() = default;
  FEFunction(MeshPtr m, Vector v) : mesh(std::move(m)), values(std::move(v)) {
    if (values.size() != mesh->num_p2_nodes()) fail(ErrorCode::InvalidArgument, "FE function size mismatch");
  }
  static FEFunction zero(MeshPtr m) {
    const int n = m->num_p2_nodes();
    return FEFunction(std::move(m), Vector::Zero(n));
  }
  /// Nodal interpolant of a function of position.
  static FEFunction interpolate(MeshPtr m, const std::function<double(const Vec2&)>& fn) {
    Vector v(m->num_p2_nodes());
    for (int i = 0; i < v.size(); ++i) v[i] = fn(m->node(i));
    return FEFunction(std::move(m), std::move(v));
  }

  std::array<double, 6> local(int t) const {
    const auto nodes = mesh->element_nodes(t);
    std::array<double, 6> out;
    for (int i = 0; i < 6; ++i) out[i] = values[nodes[i]];
    return out;
  }
  double value(int t, const Eigen::Vector3d& l) const {
    const auto c = local(t);
    const auto phi = p2_values(l);
    double s = 0.0;
    for (int i = 0; i < 6; ++i) s += c[i] * phi[i];
    return s;
  }
  Vec2 gradient(int t, const Eigen::Vector3d& l) const {
    const auto c = local(t);
    const auto dphi = p2_gradients(l, mesh->geometry()[t]);
    Vec2 s = Vec2::Zero();
    for (int i = 0; i < 6; ++i) s += c[i] * dphi[i];
    return s;
  }
  Mat2 hessian(int t) const {
    const auto c = local(t);
    const auto h = p2_hessians(mesh->geometry()[t]);
    Mat2 s = Mat2::Zero();
    for (int i = 0; i < 6; ++i) s += c[i] * h[i];
    return s;
  }
  double value(const ElementPoint& p) const { return value(p.element, p.bary); }
  Vec2 gradient(const ElementPoint& p) const { return gradient(p.element, p.bary); }
};

/// Vector-valued P2 function, one FEFunction per component.
struct VectorFEFunction {
  FEFunction x, y;

  Vec2 value(int t, const Eigen::Vector3d& l) const { return Vec2(x.value(t, l), y.value(t, l)); }
  Vec2 value(const ElementPoint& p) const { return value(p.element, p.bary); }
  /// Jacobian with rows = gradients of the components.
  Mat2 jacobian(int t, const Eigen::Vector3d& l) const {
    Mat2 d;
    d.row(0) = x.gradient(t, l).transpose();
    d.row(1) = y.gradient(t, l).transpose();
    return d;
  }
  Mat2 jacobian(const ElementPoint& p) const { return jacobian(p.element, p.bary); }
};

// ---------------------------------------------------------------------------
// Element loops

using LocalMatrix = Eigen::Matrix<double, 6, 6>;
using LocalVector = Eigen::Matrix<double, 6, 1>;

/// Visits the quadrature points of every element: fn(t, point, weight * 2|T|).
template <typename Fn>
void for_each_quad_point(const Mesh2D& mesh, int t, int order, Fn&& fn) {
  const auto& rule = quadrature_rule(order);
  const double scale = 2.0 * mesh.geometry()[t].area;
  for (const auto& q : rule) {
    ElementPoint p{t, q.bary, bary_to_point(mesh, t, q.bary)};
    fn(p, q.weight * scale);
  }
}

/// Sum over elements of a per-element scalar, computed in parallel and added in element order.
template <typename Fn>
double element_sum(const Mesh2D& mesh, Fn&& per_element) {
  std::vector<double> slots(mesh.num_triangles());
  parallel_for(slots.size(), [&](std::size_t t) { slots[t] = per_element(static_cast<int>(t)); });
  double s = 0.0;
  for (double v : slots) s += v;
  return s;
}

/// Integral of a function of the element point.
inline double integrate(const Mesh2D& mesh, const std::function<double(const ElementPoint&)>& fn, int order = 4) {
  return element_sum(mesh, [&](int t) {
    double s = 0.0;
    for_each_quad_point(mesh, t, order, [&](const ElementPoint& p, double w) { s += w * fn(p); });
    return s;
  });
}

/// Assembles a global symmetric matrix from per-element 6x6 blocks; only the
/// upper triangle of each block is read and mirrored, so the result is exactly symmetric.
template <typename Fn>
SparseSpd assemble_matrix(const Mesh2D& mesh, Fn&& local_matrix) {
  const int nt = mesh.num_triangles();
  std::vector<LocalMatrix> blocks(nt);
  parallel_for(nt, [&](std::size_t t) { blocks[t] = local_matrix(static_cast<int>(t)); });
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(nt) * 36);
  for (int t = 0; t < nt; ++t) {
    const auto nodes = mesh.element_nodes(t);
    for (int i = 0; i < 6; ++i)
      for (int j = i; j < 6; ++j) {
        const double v = blocks[t](i, j);
        trip.emplace_back(nodes[i], nodes[j], v);
        if (i != j) trip.emplace_back(nodes[j], nodes[i], v);
      }
  }
  SparseSpd m(mesh.num_p2_nodes(), mesh.num_p2_nodes());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

template <typename Fn>
Vector assemble_vector(const Mesh2D& mesh, Fn&& local_vector) {
  const int nt = mesh.num_triangles();
  std::vector<LocalVector> blocks(nt);
  parallel_for(nt, [&](std::size_t t) { blocks[t] = local_vector(static_cast<int>(t)); });
  Vector out = Vector::Zero(mesh.num_p2_nodes());
  for (int t = 0; t < nt; ++t) {
    const auto nodes = mesh.element_nodes(t);
    for (int i = 0; i < 6; ++i) out[nodes[i]] += blocks[t][i];
  }
  return out;
}

/// Load vector of  v -> int F(x) v + <G(x), grad v>.
inline Vector assemble_load(const Mesh2D& mesh, const std::function<double(const ElementPoint&)>& scalar,
                            const std::function<Vec2(const ElementPoint&)>& flux = {}, int order = 4) {
  return assemble_vector(mesh, [&](int t) {
    LocalVector b = LocalVector::Zero();
    for_each_quad_point(mesh, t, order, [&](const ElementPoint& p, double w) {
      const auto phi = p2_values(p.bary);
      const double s = scalar ? scalar(p) : 0.0;
      if (flux) {
        const Vec2 g = flux(p);
        const auto dphi = p2_gradients(p.bary, mesh.geometry()[t]);
        for (int i = 0; i < 6; ++i) b[i] += w * (s * phi[i] + g.dot(dphi[i]));
      } else {
        for (int i = 0; i < 6; ++i) b[i] += w * s * phi[i];
      }
    });
    return b;
  });
}

inline SparseSpd assemble_mass(const Mesh2D& mesh) {
  return assemble_matrix(mesh, [&](int t) {
    LocalMatrix m = LocalMatrix::Zero();
    for_each_quad_point(mesh, t, 4, [&](const ElementPoint& p, double w) {
      const auto phi = p2_values(p.bary);
      for (int i = 0; i < 6; ++i)
        for (int j = i; j < 6; ++j) m(i, j) += w * phi[i] * phi[j];
    });
    return m;
  });
}

inline SparseSpd assemble_stiffness(const Mesh2D& mesh) {
  return assemble_matrix(mesh, [&](int t) {
    LocalMatrix m = LocalMatrix::Zero();
    for_each_quad_point(mesh, t, 2, [&](const ElementPoint& p, double w) {
      const auto dphi = p2_gradients(p.bary, mesh.geometry()[t]);
      for (int i = 0; i < 6; ++i)
        for (int j = i; j < 6; ++j) m(i, j) += w * dphi[i].dot(dphi[j]);
    });
    return m;
  });
}

/// Energy int f(grad u) + g(u) with the order-4 rule.
inline double assemble_energy(const Mesh2D& mesh, const ConvexPair& pair, const FEFunction& u) {
  return element_sum(mesh, [&](int t) {
    double s = 0.0;
    for_each_quad_point(mesh, t, 4, [&](const ElementPoint& p, double w) {
      s += w * (pair.f(u.gradient(p)) + pair.g(u.value(p)));
    });
    return s;
  });
}

/// Gradient (residual) of the energy at u.
inline Vector assemble_residual(const Mesh2D& mesh, const ConvexPair& pair, const FEFunction& u) {
  return assemble_vector(mesh, [&](int t) {
    LocalVector r = LocalVector::Zero();
    for_each_quad_point(mesh, t, 4, [&](const ElementPoint& p, double w) {
      const auto phi = p2_values(p.bary);
      const auto dphi = p2_gradients(p.bary, mesh.geometry()[t]);
      const Vec2 s = pair.grad_f(u.gradient(p));
      const double dg = pair.dg(u.value(p));
      for (int i = 0; i < 6; ++i) r[i] += w * (s.dot(dphi[i]) + dg * phi[i]);
    });
    return r;
  });
}

/// Hessian (Newton tangent) of the energy at u.
inline SparseSpd assemble_tangent(const Mesh2D& mesh, const ConvexPair& pair, const FEFunction& u) {
  return assemble_matrix(mesh, [&](int t) {
    LocalMatrix m = LocalMatrix::Zero();
    for_each_quad_point(mesh, t, 4, [&](const ElementPoint& p, double w) {
      const auto phi = p2_values(p.bary);
      const auto dphi = p2_gradients(p.bary, mesh.geometry()[t]);
      const Mat2 h = pair.hess_f(u.gradient(p));
      const double d2g = pair.d2g(u.value(p));
      for (int i = 0; i < 6; ++i) {
        const Vec2 hi = h * dphi[i];
        for (int j = i; j < 6; ++j) m(i, j) += w * (hi.dot(dphi[j]) + d2g * phi[i] * phi[j]);
      }
    });
    return m;
  });
}

/// Hessian matrix of the quadratic form  w -> int <M grad w, grad w> + s w^2,
/// i.e. entries 2 int (<M grad phi_i, grad phi_j> + s phi_i phi_j), so that the
/// form equals <Mw, w>/2.
inline SparseSpd assemble_bilinear(const Mesh2D& mesh, const QuadraticFormSpec& spec, int order = 4) {
  return assemble_matrix(mesh, [&](int t) {
    LocalMatrix m = LocalMatrix::Zero();
    for_each_quad_point(mesh, t, order, [&](const ElementPoint& p, double w) {
      const Mat2 a = spec.matrix_field ? symmetrized(spec.matrix_field(p)) : Mat2::Zero().eval();
      const double s = spec.scalar_field ? spec.scalar_field(p) : 0.0;
      if (!a.allFinite() || !std::isfinite(s)) fail(ErrorCode::InvalidArgument, "non-finite quadratic form data");
      const auto phi = p2_values(p.bary);
      const auto dphi = p2_gradients(p.bary, mesh.geometry()[t]);
      for (int i = 0; i < 6; ++i) {
        const Vec2 ai = a * dphi[i];
        for (int j = i; j < 6; ++j) m(i, j) += 2.0 * w * (ai.dot(dphi[j]) + s * phi[i] * phi[j]);
      }
    });
    return m;
  });
}

// ---------------------------------------------------------------------------
// Sparse SPD solves

struct Constraint {
  int dof;
  double value;
};

/// Factorization of M restricted to the free dofs; constrained dofs are
/// eliminated symmetrically.
class SpdSolver {
 public:
  SpdSolver(const SparseSpd& m, std::vector<int> constrained_dofs) : n_(static_cast<int>(m.rows())) {
    if (m.rows() != m.cols()) fail(ErrorCode::InvalidArgument, "matrix must be square");
    std::sort(constrained_dofs.begin(), constrained_dofs.end());
    constrained_dofs.erase(std::unique(constrained_dofs.begin(), constrained_dofs.end()), constrained_dofs.end());
    free_index_.assign(n_, -1);
    std::vector<char> fixed(n_, 0);
    for (int d : constrained_dofs) {
      if (d < 0 || d >= n_) fail(ErrorCode::InvalidArgument, "constraint dof out of range");
      fixed[d] = 1;
    }
    for (int i = 0; i < n_; ++i)
      if (!fixed[i]) {
        free_index_[i] = static_cast<int>(free_.size());
        free_.push_back(i);
      } else {
        fixed_.push_back(i);
      }
    std::vector<Eigen::Triplet<double>> ff, fc;
    for (int k = 0; k < m.outerSize(); ++k)
      for (SparseSpd::InnerIterator it(m, k); it; ++it) {
        const int fi = free_index_[it.row()];
        if (fi < 0) continue;
        const int fj = free_index_[it.col()];
        if (fj >= 0)
          ff.emplace_back(fi, fj, it.value());
        else
          fc.emplace_back(fi, it.col(), it.value());
      }
    mff_.resize(static_cast<Eigen::Index>(free_.size()), static_cast<Eigen::Index>(free_.size()));
    mff_.setFromTriplets(ff.begin(), ff.end());
    mfc_.resize(static_cast<Eigen::Index>(free_.size()), n_);
    mfc_.setFromTriplets(fc.begin(), fc.end());
    if (!free_.empty()) {
      ldlt_.compute(mff_);
      if (ldlt_.info() != Eigen::Success) fail(ErrorCode::SolverBreakdown, "sparse LDLT factorization failed");
      const Vector d = ldlt_.vectorD();
      if (!(d.minCoeff() > 0.0)) fail(ErrorCode::SolverBreakdown, "matrix is not positive definite on the free dofs");
    }
  }

  /// Solves M x = rhs on the free dofs with the given pinned values.
  Vector solve(const Vector& rhs, const std::vector<Constraint>& constraints = {}) const {
    if (rhs.size() != n_) fail(ErrorCode::InvalidArgument, "right-hand side size mismatch");
    Vector x = Vector::Zero(n_);
    for (const auto& c : constraints) {
      if (c.dof < 0 || c.dof >= n_ || free_index_[c.dof] >= 0)
        fail(ErrorCode::InvalidArgument, "constraint on a dof that is not constrained in the factorization");
      x[c.dof] = c.value;
    }
    if (free_.empty()) return x;
    Vector b(static_cast<Eigen::Index>(free_.size()));
    for (std::size_t i = 0; i < free_.size(); ++i) b[i] = rhs[free_[i]];
    b -= mfc_ * x;
    Vector y = ldlt_.solve(b);
    const double bn = b.norm();
    if (!((mff_ * y - b).norm() <= 1e-10 * bn)) {
      // one step of iterative refinement before giving up
      y += ldlt_.solve(b - mff_ * y);
      if (!((mff_ * y - b).norm() <= 1e-10 * bn))
        fail(ErrorCode::SolverBreakdown, "linear solve residual above tolerance");
    }
    for (std::size_t i = 0; i < free_.size(); ++i) x[free_[i]] = y[i];
    return x;
  }

  const std::vector<int>& free_dofs() const { return free_; }
  const std::vector<int>& fixed_dofs() const { return fixed_; }

 private:
  int n_;
  std::vector<int> free_, fixed_, free_index_;
  SparseSpd mff_, mfc_;
  Eigen::SimplicialLDLT<SparseSpd> ldlt_;
};

/// One-shot constrained SPD solve.
inline Vector solve_spd(const SparseSpd& m, const Vector& rhs, const std::vector<Constraint>& constraints = {}) {
  std::vector<int> dofs;
  dofs.reserve(constraints.size());
  for (const auto& c : constraints) dofs.push_back(c.dof);
  return SpdSolver(m, dofs).solve(rhs, constraints);
}

// ---------------------------------------------------------------------------
// Boundary quadrature

/// A Gauss point on a boundary edge, with the owning triangle's barycentrics.
struct BoundaryPoint {
  int boundary_edge;
  BoundaryTag tag;
  double s;  // edge parameter in [0, 1] along the stored orientation
  ElementPoint point;
  Vec2 normal;   // outward unit normal of the edge
  Vec2 tangent;  // unit tangent, domain on the left
  double weight; // Gauss weight times edge length
};

inline BoundaryPoint boundary_point(const Mesh2D& mesh, int b, double s, double w01) {
  const auto& e = mesh.boundary_edges()[b];
  const auto& info = mesh.boundary_info()[b];
  const Vec2& x0 = mesh.vertices()[e.v[0]];
  const Vec2& x1 = mesh.vertices()[e.v[1]];
  const Vec2 d = x1 - x0;
  const double len = d.norm();
  BoundaryPoint bp;
  bp.boundary_edge = b;
  bp.tag = e.tag;
  bp.s = s;
  bp.tangent = d / len;
  bp.normal = right_normal(bp.tangent);
  bp.weight = w01 * len;
  bp.point.element = info.triangle;
  bp.point.bary.setZero();
  bp.point.bary[info.local_edge] = 1.0 - s;
  bp.point.bary[(info.local_edge + 1) % 3] = s;
  bp.point.x = (1.0 - s) * x0 + s * x1;
  return bp;
}

/// Visits the 3-point Gauss points of every boundary edge matching the filter, in edge order.
template <typename Fn>
void for_each_boundary_point(const Mesh2D& mesh, TagFilter filter, Fn&& fn) {
  for (int b = 0; b < static_cast<int>(mesh.boundary_edges().size()); ++b) {
    if (!matches(filter, mesh.boundary_edges()[b].tag)) continue;
    for (const auto& [s, w] : edge_rule()) fn(boundary_point(mesh, b, s, w));
  }
}

inline double boundary_integral(const Mesh2D& mesh, TagFilter filter,
                                const std::function<double(const BoundaryPoint&)>& density) {
  double total = 0.0;
  for_each_boundary_point(mesh, filter, [&](const BoundaryPoint& bp) { total += bp.weight * density(bp); });
  return total;
}

/// Convenience overload with a density of (point, normal, tangent).
inline double boundary_integral(const Mesh2D& mesh, TagFilter filter,
                                const std::function<double(const Vec2&, const Vec2&, const Vec2&)>& density) {
  return boundary_integral(mesh, filter, std::function<double(const BoundaryPoint&)>([&](const BoundaryPoint& bp) {
                             return density(bp.point.x, bp.normal, bp.tangent);
                           }));
}

/// Boundary load vector of  v -> int_{filter} h v.
inline Vector assemble_boundary_load(const Mesh2D& mesh, TagFilter filter,
                                     const std::function<double(const BoundaryPoint&)>& density) {
  Vector out = Vector::Zero(mesh.num_p2_nodes());
  for_each_boundary_point(mesh, filter, [&](const BoundaryPoint& bp) {
    const double h = density(bp);
    const auto phi = p2_values(bp.point.bary);
    const auto nodes = mesh.element_nodes(bp.point.element);
    for (int i = 0; i < 6; ++i) out[nodes[i]] += bp.weight * h * phi[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Recovery and weak residuals

/// Componentwise L2 projection of grad u onto continuous P2.
inline VectorFEFunction recover_gradient(const FEFunction& u) {
  const Mesh2D& mesh = *u.mesh;
  const SpdSolver mass(assemble_mass(mesh), {});
  const Vector bx = assemble_load(mesh, [&](const ElementPoint& p) { return u.gradient(p).x(); });
  const Vector by = assemble_load(mesh, [&](const ElementPoint& p) { return u.gradient(p).y(); });
  return {FEFunction(u.mesh, mass.solve(bx)), FEFunction(u.mesh, mass.solve(by))};
}

/// Symmetrized Jacobian of a recovered gradient.
inline Mat2 recovered_hessian(const VectorFEFunction& grad, int t, const Eigen::Vector3d& l) {
  return symmetrized(grad.jacobian(t, l));
}

/// max_i |int <F, grad phi_i> + target phi_i| / ||phi_i||_{H1} over basis
/// functions vanishing on the whole boundary. Zero means div F = target weakly.
inline double weak_divergence_residual(const Mesh2D& mesh, const std::function<Vec2(const ElementPoint&)>& field,
                                       const std::function<double(const ElementPoint&)>& target, int order = 4) {
  const Vector r = assemble_load(mesh, target, field, order);
  const SparseSpd k = assemble_stiffness(mesh);
  const SparseSpd m = assemble_mass(mesh);
  std::vector<char> on_boundary(mesh.num_p2_nodes(), 0);
  for (std::size_t b = 0; b < mesh.boundary_edges().size(); ++b) {
    const auto& e = mesh.boundary_edges()[b];
    on_boundary[e.v[0]] = on_boundary[e.v[1]] = 1;
    on_boundary[mesh.num_vertices() + mesh.boundary_info()[b].edge] = 1;
  }
  double worst = 0.0;
  for (int i = 0; i < mesh.num_p2_nodes(); ++i) {
    if (on_boundary[i]) continue;
    const double norm = std::sqrt(k.coeff(i, i) + m.coeff(i, i));
    worst = std::max(worst, std::abs(r[i]) / norm);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Point location

/// Bucket grid over triangle bounding boxes.
class PointLocator {
 public:
  explicit PointLocator(const Mesh2D& mesh) : mesh_(&mesh) {
    lo_ = hi_ = mesh.vertices().front();
    for (const auto& v : mesh.vertices()) {
      lo_ = lo_.cwiseMin(v);
      hi_ = hi_.cwiseMax(v);
    }
    const int n = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.num_triangles()))));
    nx_ = ny_ = n;
    cell_ = ((hi_ - lo_).array() / n).matrix();
    cell_ = cell_.cwiseMax(Vec2(1e-300, 1e-300));
    buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (int t = 0; t < mesh.num_triangles(); ++t) {
      const auto& tri = mesh.triangles()[t];
      Vec2 a = mesh.vertices()[tri[0]], b = a;
      for (int k = 1; k < 3; ++k) {
        a = a.cwiseMin(mesh.vertices()[tri[k]]);
        b = b.cwiseMax(mesh.vertices()[tri[k]]);
      }
      const auto [i0, j0] = cell_of(a);
      const auto [i1, j1] = cell_of(b);
      for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(t);
    }
  }

  /// The containing triangle with barycentrics, or nothing if x is outside (tolerance relative to diameter).
  std::optional<ElementPoint> locate(const Vec2& x, double tol = 1e-12) const {
    if ((x - lo_).minCoeff() < -tol * 10 || (hi_ - x).minCoeff() < -tol * 10) return std::nullopt;
    const auto [i, j] = cell_of(x);
    const double slack = tol * std::max(1.0, (hi_ - lo_).norm());
    for (int t : buckets_[static_cast<std::size_t>(j) * nx_ + i]) {
      const Eigen::Vector3d l = barycentric(t, x);
      if (l.minCoeff() >= -slack) {
        ElementPoint p{t, l, x};
        return p;
      }
    }
    return std::nullopt;
  }

  Eigen::Vector3d barycentric(int t, const Vec2& x) const {
    const auto& tri = mesh_->triangles()[t];
    const auto& g = mesh_->geometry()[t];
    const Vec2& x0 = mesh_->vertices()[tri[0]];
    Eigen::Vector3d l;
    l[1] = g.grad_lambda[1].dot(x - x0);
    l[2] = g.grad_lambda[2].dot(x - x0);
    l[0] = 1.0 - l[1] - l[2];
    return l;
  }

 private:
  std::pair<int, int> cell_of(const Vec2& x) const {
    int i = static_cast<int>(std::floor((x.x() - lo_.x()) / cell_.x()));
    int j = static_cast<int>(std::floor((x.y() - lo_.y()) / cell_.y()));
    return {std::clamp(i, 0, nx_ - 1), std::clamp(j, 0, ny_ - 1)};
  }

  const Mesh2D* mesh_;
  Vec2 lo_, hi_, cell_;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

}  // namespace shapehess
