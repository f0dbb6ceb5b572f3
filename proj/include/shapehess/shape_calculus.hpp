#pragma once

#include "shapehess/boundary_geometry.hpp"
#include "shapehess/deformation.hpp"
#include "shapehess/error.hpp"
#include "shapehess/fem.hpp"
#include "shapehess/solver.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace shapehess {

// ---------------------------------------------------------------------------
// Pointwise fields

using VectorField = std::function<Vec2(const ElementPoint&)>;
using MatrixField = std::function<Mat2(const ElementPoint&)>;

/// Energy-momentum tensor A = grad u (x) sigma - (f + g) I from the recovered fields.
inline MatrixField tensor_A(const StateSolution& s) {
  return [&s](const ElementPoint& p) -> Mat2 {
    const Vec2 g = s.gradient(p);
    const Vec2 sig = s.deriv_pair.grad_f(g);
    return outer(g, sig) - (s.deriv_pair.f(g) + s.deriv_pair.g(s.value(p))) * Mat2::Identity();
  };
}

/// Hessian of u on the boundary rebuilt from identities that hold on a C^2
/// boundary, instead of the one-sided recovered Hessian. On a polygon u_tt
/// vanishes along flat Dirichlet edges, so the raw trace misses the curvature
/// term entirely and does not converge.
///
/// In the smoothed frame (n, t): the tangential-tangential entry is H u_n on
/// Gamma_D (u = 0 along the curve) and the tangential derivative of grad u . t
/// on Gamma_N; the mixed entry is the tangential derivative of grad u . n on
/// Gamma_D and follows from d/ds (sigma . n) = 0 on Gamma_N; the normal-normal
/// entry comes from the equation tr(hess_f hess u) = g'(u).
inline Mat2 boundary_hessian(const StateSolution& s, const BoundaryPoint& bp, const BoundaryGeometry::Frame& fr) {
  const auto& pair = s.deriv_pair;
  const Vec2& n = fr.normal;
  const Vec2& t = fr.tangent;
  const Vec2 g = s.gradient(bp.point);
  const Vec2 dg_t = s.grad_u.jacobian(bp.point) * t;
  const Mat2 hf = pair.hess_f(g);
  const double knn = n.dot(hf * n), knt = n.dot(hf * t), ktt = t.dot(hf * t);
  double utt, unt;
  if (bp.tag == BoundaryTag::Dirichlet) {
    utt = fr.curvature * g.dot(n);
    unt = dg_t.dot(n);
  } else {
    utt = dg_t.dot(t);
    unt = (-fr.curvature * pair.grad_f(g).dot(t) - knt * utt) / knn;
  }
  const double unn = (pair.dg(s.value(bp.point)) - 2.0 * knt * unt - ktt * utt) / knn;
  return unn * outer(n, n) + unt * (outer(n, t) + outer(t, n)) + utt * outer(t, t);
}

/// B = hess_f(grad u) hess(u) V - (DV - div V I) sigma, with an optional Hessian override.
inline Vec2 field_B_at(const StateSolution& s, const DeformationField& v, const ElementPoint& p,
                       const std::optional<Mat2>& hess = std::nullopt) {
  const Vec2 g = s.gradient(p);
  const Mat2 dv = v.jacobian(p.x);
  const Vec2 sig = s.deriv_pair.grad_f(g);
  return s.deriv_pair.hess_f(g) * (hess.value_or(s.hessian(p)) * v.value(p.x)) -
         (dv - dv.trace() * Mat2::Identity()) * sig;
}

inline VectorField field_B(const StateSolution& s, const DeformationField& v) {
  return [&s, v](const ElementPoint& p) { return field_B_at(s, v, p); };
}

/// Weak residual of div B = g''(u) <V, grad u> + g'(u) div V.
inline double check_divB(const StateSolution& s, const DeformationField& v) {
  return weak_divergence_residual(*s.mesh, field_B(s, v), [&](const ElementPoint& p) {
    const double u = s.value(p);
    return s.deriv_pair.d2g(u) * v.value(p.x).dot(s.gradient(p)) + s.deriv_pair.dg(u) * v.jacobian(p.x).trace();
  });
}

enum class CVariant { Full, Dirichlet, Neumann };

inline Vec2 field_C_at(const StateSolution& s, const DeformationField& v, CVariant variant, const ElementPoint& p,
                       const std::optional<Mat2>& hess = std::nullopt) {
  const auto& pair = s.deriv_pair;
  const Vec2 g = s.gradient(p);
  const Vec2 sig = pair.grad_f(g);
  const Vec2 V = v.value(p.x);
  const Mat2 dv = v.jacobian(p.x);
  const Mat2 cof = dv.trace() * Mat2::Identity() - dv;  // div V I - DV
  const double vg = V.dot(g);
  const double fg = pair.f(g) + pair.g(s.value(p));
  const Vec2 hhv = pair.hess_f(g) * (hess.value_or(s.hessian(p)) * V);
  switch (variant) {
    case CVariant::Full:
      return -vg * hhv - vg * (cof * sig) + (dv * sig).dot(g) * V - (dv * V).dot(g) * sig - fg * (cof * V);
    case CVariant::Dirichlet:
      return vg * hhv + (sig.dot(g) - pair.f(g)) * (cof * V);
    case CVariant::Neumann:
      return -vg * hhv + vg * (dv * sig) + (dv * sig).dot(g) * V - fg * (cof * V);
  }
  return Vec2::Zero();
}

inline VectorField field_C(const StateSolution& s, const DeformationField& v, CVariant variant) {
  return [&s, v, variant](const ElementPoint& p) { return field_C_at(s, v, variant, p); };
}

// ---------------------------------------------------------------------------
// First derivative

namespace detail {

// P1 interpolant of V on one element: value and (constant) Jacobian.
struct ElementField {
  std::array<Vec2, 3> nodal;
  Mat2 jac;
};

inline ElementField interpolate_on_element(const Mesh2D& m, int t, const DeformationField& v) {
  ElementField e;
  e.jac.setZero();
  for (int i = 0; i < 3; ++i) {
    e.nodal[i] = v.value(m.vertices()[m.triangles()[t][i]]);
    e.jac += outer(e.nodal[i], m.geometry()[t].grad_lambda[i]);
  }
  return e;
}

inline Vec2 eval(const ElementField& e, const Eigen::Vector3d& l) {
  return l[0] * e.nodal[0] + l[1] * e.nodal[1] + l[2] * e.nodal[2];
}

}  // namespace detail

/// J' = int A : DV, evaluated with the raw discrete gradient, the solver
/// integrand and the piecewise-linear interpolant of V. With these choices the
/// value is the exact eps-derivative of the discrete J on the deformed meshes.
inline double first_derivative_volume(const StateSolution& s, const DeformationField& v) {
  const Mesh2D& m = *s.mesh;
  return element_sum(m, [&](int t) {
    const auto e = detail::interpolate_on_element(m, t, v);
    double acc = 0.0;
    for_each_quad_point(m, t, 4, [&](const ElementPoint& p, double w) {
      const Vec2 g = s.raw_gradient(p);
      const Vec2 sig = s.pair.grad_f(g);
      acc += w * ((e.jac * sig).dot(g) - (s.pair.f(g) + s.pair.g(s.value(p))) * e.jac.trace());
    });
    return acc;
  });
}

/// l1(phi) = int_{Gamma_D} f*(sigma) phi - int_{Gamma_N} (f + g) phi for a boundary density phi.
inline double l1_form(const StateSolution& s, const std::function<double(const BoundaryPoint&)>& phi) {
  if (!s.deriv_pair.has_f_conjugate())
    fail(ErrorCode::ConjugateUnavailable, "boundary first derivative needs the conjugate f*");
  const auto& pair = s.deriv_pair;
  double total = 0.0;
  for_each_boundary_point(*s.mesh, TagFilter::Both, [&](const BoundaryPoint& bp) {
    const Vec2 g = s.gradient(bp.point);
    const double density = bp.tag == BoundaryTag::Dirichlet ? pair.f_conjugate(pair.grad_f(g))
                                                            : -(pair.f(g) + pair.g(s.value(bp.point)));
    total += bp.weight * density * phi(bp);
  });
  return total;
}

/// J' = l1(V_n) with the edge normals.
inline double first_derivative_boundary(const StateSolution& s, const DeformationField& v) {
  return l1_form(s, [&](const BoundaryPoint& bp) { return v.value(bp.point.x).dot(bp.normal); });
}

// ---------------------------------------------------------------------------
// Quadratic forms and the auxiliary minimization

/// Minimizer of v -> Q(v) + load . v with v pinned on Gamma_D, where Q(v) = <Mv, v>/2.
struct AuxSolution {
  FEFunction v;
  double min_value = 0.0;
  double residual = 0.0;  // norm of the free-dof normal equations
};

inline AuxSolution solve_aux(const MeshPtr& mesh, const SparseSpd& m, const std::vector<Constraint>& pinned,
                             const Vector& load) {
  std::vector<int> dofs;
  for (const auto& c : pinned) dofs.push_back(c.dof);
  const SpdSolver solver(m, dofs);
  const Vector v = solver.solve(-load, pinned);
  AuxSolution a;
  a.v = FEFunction(mesh, v);
  const Vector mv = m * v;
  a.min_value = 0.5 * v.dot(mv) + load.dot(v);
  double r = 0.0;
  for (int i : solver.free_dofs()) r += (mv[i] + load[i]) * (mv[i] + load[i]);
  a.residual = std::sqrt(r);
  return a;
}

/// Floor applied to |grad u| inside degenerate p-torsion weights, relative to max |grad u|.
inline constexpr double kDefaultRhoMin = 1e-6;

/// max over recovered nodal gradients of |grad u|.
inline double max_gradient_norm(const StateSolution& s) {
  double mx = 0.0;
  for (int i = 0; i < s.grad_u.x.values.size(); ++i)
    mx = std::max(mx, std::hypot(s.grad_u.x.values[i], s.grad_u.y.values[i]));
  return mx;
}

/// Pointwise data of Q(v) = int <hess_f(grad u) grad v, grad v> + g''(u) v^2. For
/// p-torsion the weight is evaluated at grad u with |grad u| floored at rho_min * max|grad u|.
inline QuadraticFormSpec quadratic_form(const StateSolution& s, double rho_min = kDefaultRhoMin) {
  QuadraticFormSpec q;
  const bool degenerate = s.deriv_pair.kind == ConvexPair::Kind::PTorsion && *s.deriv_pair.p != 2.0;
  const double floor = degenerate ? rho_min * max_gradient_norm(s) : 0.0;
  q.matrix_field = [&s, floor](const ElementPoint& p) -> Mat2 {
    Vec2 g = s.gradient(p);
    if (floor > 0.0 && g.norm() < floor) g = g.norm() > 0.0 ? Vec2(g.normalized() * floor) : Vec2(floor, 0.0);
    return s.deriv_pair.hess_f(g);
  };
  q.scalar_field = [&s](const ElementPoint& p) { return s.deriv_pair.d2g(s.value(p)); };
  return q;
}

/// Q(v) = <Mv, v>/2 for the assembled form.
inline double evaluate_Q(const SparseSpd& m, const Vector& v) { return 0.5 * v.dot(m * v); }

// ---------------------------------------------------------------------------
// Second derivative, volume route

struct VolumeSecondDerivative {
  double value = 0.0;       // J'' = -min E
  double min_E = 0.0;
  FEFunction w;             // minimizer
  double constant = 0.0;    // E(0)
};

/// J'' = -min_w E(w, V) with
///   E = 2 int (f+g) det DV + int <H (grad w - a), grad w - a> + int g'' w^2
///       - 2 int <(DV - div V I) sigma, grad w - a> + 2 int div V g'(u) w,   a = DV^T grad u,
/// minimized over P2 functions vanishing on Gamma_D. Raw discrete fields and
/// the interpolant of V, as in first_derivative_volume.
inline VolumeSecondDerivative second_derivative_volume_detail(const StateSolution& s, const DeformationField& v) {
  const Mesh2D& m = *s.mesh;
  const auto& pair = s.pair;
  const int nt = m.num_triangles();
  std::vector<double> const_part(nt);
  std::vector<LocalVector> lin(nt);
  parallel_for(nt, [&](std::size_t tt) {
    const int t = static_cast<int>(tt);
    const auto e = detail::interpolate_on_element(m, t, v);
    const Mat2& d = e.jac;
    const double tr = d.trace(), det = d.determinant();
    double c = 0.0;
    LocalVector b = LocalVector::Zero();
    for_each_quad_point(m, t, 4, [&](const ElementPoint& p, double w) {
      const Vec2 g = s.raw_gradient(p);
      const double u = s.value(p);
      const Vec2 sig = pair.grad_f(g);
      const Mat2 h = pair.hess_f(g);
      const Vec2 a = d.transpose() * g;
      const Vec2 dsig = (d - tr * Mat2::Identity()) * sig;
      c += w * (2.0 * det * (pair.f(g) + pair.g(u)) + a.dot(h * a) + 2.0 * dsig.dot(a));
      // first variation in u: <(tr I - D) sigma - H a, grad phi> + tr g' phi
      const Vec2 flux = -dsig - h * a;
      const double src = tr * pair.dg(u);
      const auto phi = p2_values(p.bary);
      const auto dphi = p2_gradients(p.bary, m.geometry()[t]);
      for (int i = 0; i < 6; ++i) b[i] += w * (flux.dot(dphi[i]) + src * phi[i]);
    });
    const_part[t] = c;
    lin[t] = b;
  });
  double c = 0.0;
  Vector l = Vector::Zero(m.num_p2_nodes());
  for (int t = 0; t < nt; ++t) {
    c += const_part[t];
    const auto nodes = m.element_nodes(t);
    for (int i = 0; i < 6; ++i) l[nodes[i]] += lin[t][i];
  }
  // E(w) = c + 2 l.w + w.T w with T the energy Hessian (tangent) at u.
  const DofMap dofs(m);
  const SparseSpd tangent = assemble_tangent(m, pair, s.u);
  std::vector<Constraint> pinned;
  for (int dof : dofs.dirichlet_dofs) pinned.push_back({dof, 0.0});
  const AuxSolution a = solve_aux(s.mesh, 2.0 * tangent, pinned, 2.0 * l);
  VolumeSecondDerivative out;
  out.constant = c;
  out.min_E = c + a.min_value;
  out.value = -out.min_E;
  out.w = a.v;
  return out;
}

inline double second_derivative_volume(const StateSolution& s, const DeformationField& v) {
  return second_derivative_volume_detail(s, v).value;
}

/// E(w, V) evaluated term by term, for checks against the minimization.
inline double evaluate_E(const StateSolution& s, const DeformationField& v, const FEFunction& w) {
  const Mesh2D& m = *s.mesh;
  const auto& pair = s.pair;
  return element_sum(m, [&](int t) {
    const auto e = detail::interpolate_on_element(m, t, v);
    const Mat2& d = e.jac;
    double acc = 0.0;
    for_each_quad_point(m, t, 4, [&](const ElementPoint& p, double wt) {
      const Vec2 g = s.raw_gradient(p);
      const double u = s.value(p);
      const Vec2 a = d.transpose() * g;
      const Vec2 r = w.gradient(p) - a;
      const Vec2 b = -(d - d.trace() * Mat2::Identity()) * pair.grad_f(g);
      const double wv = w.value(p);
      acc += wt * (2.0 * (pair.f(g) + pair.g(u)) * d.determinant() + r.dot(pair.hess_f(g) * r) +
                   pair.d2g(u) * wv * wv + 2.0 * b.dot(r) + 2.0 * d.trace() * pair.dg(u) * wv);
    });
    return acc;
  });
}

// ---------------------------------------------------------------------------
// Second derivative, boundary routes

struct BoundarySecondDerivative {
  double value = 0.0;
  double dirichlet_term = 0.0;  // int_{Gamma_D} C_D . n
  double neumann_term = 0.0;    // int_{Gamma_N} C_N . n
  AuxSolution aux;
};

/// J'' = int_{Gamma_D} C_D.n + int_{Gamma_N} C_N.n
///       - min { Q(v) + 2 int_{Gamma_N} v B.n : v = -<V, grad u> on Gamma_D }.
inline BoundarySecondDerivative second_derivative_boundary_detail(const StateSolution& s, const DeformationField& v,
                                                                  double rho_min = kDefaultRhoMin) {
  const Mesh2D& m = *s.mesh;
  const BoundaryGeometry geo(m);
  BoundarySecondDerivative out;
  for_each_boundary_point(m, TagFilter::Both, [&](const BoundaryPoint& bp) {
    const auto fr = geo.frame(bp);
    const Mat2 hess = boundary_hessian(s, bp, fr);
    if (bp.tag == BoundaryTag::Dirichlet)
      out.dirichlet_term += bp.weight * field_C_at(s, v, CVariant::Dirichlet, bp.point, hess).dot(fr.normal);
    else
      out.neumann_term += bp.weight * field_C_at(s, v, CVariant::Neumann, bp.point, hess).dot(fr.normal);
  });
  const Vector load = assemble_boundary_load(m, TagFilter::Neumann, [&](const BoundaryPoint& bp) {
    const auto fr = geo.frame(bp);
    return 2.0 * field_B_at(s, v, bp.point, boundary_hessian(s, bp, fr)).dot(fr.normal);
  });
  const DofMap dofs(m);
  std::vector<Constraint> pinned;
  for (int d : dofs.dirichlet_dofs) {
    const Vec2 g(s.grad_u.x.values[d], s.grad_u.y.values[d]);
    pinned.push_back({d, -v.value(m.node(d)).dot(g)});
  }
  out.aux = solve_aux(s.mesh, assemble_bilinear(m, quadratic_form(s, rho_min)), pinned, load);
  out.value = out.dirichlet_term + out.neumann_term - out.aux.min_value;
  return out;
}

inline double second_derivative_boundary(const StateSolution& s, const DeformationField& v) {
  return second_derivative_boundary_detail(s, v).value;
}

namespace detail {

// Smoothed frame quantities along the boundary for the C^2 formulas.
struct SmoothPoint {
  BoundaryGeometry::Frame frame;
  double vn;      // <V, n>
  double vt;      // <V, t>
  double dvn_ds;  // tangential derivative of V_n: <DV t, n> + H <V, t>
  double dun;     // normal derivative of u
};

inline SmoothPoint smooth_point(const StateSolution& s, const BoundaryGeometry& geo, const DeformationField& v,
                                const BoundaryPoint& bp) {
  SmoothPoint sp;
  sp.frame = geo.frame(bp);
  const Vec2& n = sp.frame.normal;
  const Vec2& t = sp.frame.tangent;
  const Vec2 V = v.value(bp.point.x);
  sp.vn = V.dot(n);
  sp.vt = V.dot(t);
  sp.dvn_ds = (v.jacobian(bp.point.x) * t).dot(n) + sp.frame.curvature * sp.vt;
  sp.dun = s.gradient(bp.point).dot(n);
  return sp;
}

// Dirichlet data v = -phi du/dn at the Gamma_D nodes, with the smoothed normal at each node.
inline std::vector<Constraint> normal_dirichlet_data(const StateSolution& s, const BoundaryGeometry& geo,
                                                     const std::function<double(const Vec2&, const Vec2&)>& phi) {
  const Mesh2D& m = *s.mesh;
  const DofMap dofs(m);
  std::map<int, Vec2> node_normal;
  const int nv = m.num_vertices();
  for (std::size_t b = 0; b < m.boundary_edges().size(); ++b) {
    const auto& e = m.boundary_edges()[b];
    node_normal[e.v[0]] = geo.vertex_normal(e.v[0]);
    node_normal[e.v[1]] = geo.vertex_normal(e.v[1]);
    node_normal[nv + m.boundary_info()[b].edge] = geo.frame(static_cast<int>(b), 0.5).normal;
  }
  std::vector<Constraint> pinned;
  for (int d : dofs.dirichlet_dofs) {
    const Vec2& n = node_normal.at(d);
    const Vec2 g(s.grad_u.x.values[d], s.grad_u.y.values[d]);
    pinned.push_back({d, -phi(m.node(d), n) * g.dot(n)});
  }
  return pinned;
}

}  // namespace detail

/// Specialized torsion formula for mixed boundary conditions, plus the l1(z)
/// correction for fields with a tangential component.
///
/// The Neumann load carries V_n u_nn next to the tangential term. It comes from
/// the <D sigma n, n> part of the l2 load; dropping it gives wrong values as soon
/// as V_n is nonzero on Gamma_N (moving the inner circle of an annulus is a
/// closed-form counterexample).
inline double second_derivative_torsion(const StateSolution& s, const DeformationField& v) {
  if (s.deriv_pair.kind != ConvexPair::Kind::Torsion)
    fail(ErrorCode::WrongPair, "the torsion formula needs the torsion integrand");
  const Mesh2D& m = *s.mesh;
  const BoundaryGeometry geo(m);
  const double lambda = s.deriv_pair.lambda;
  double local = 0.0, l1z = 0.0;
  for_each_boundary_point(m, TagFilter::Both, [&](const BoundaryPoint& bp) {
    const auto sp = detail::smooth_point(s, geo, v, bp);
    const Vec2 g = s.gradient(bp.point);
    const double H = sp.frame.curvature;
    const double z = H * sp.vt * sp.vt - 2.0 * sp.vt * sp.dvn_ds;
    if (bp.tag == BoundaryTag::Dirichlet) {
      local += -0.5 * bp.weight * sp.vn * sp.vn * (2.0 * lambda * sp.dun + sp.dun * sp.dun * H);
      l1z += bp.weight * 0.5 * g.squaredNorm() * z;
    } else {
      const double u = s.value(bp.point);
      local += -0.5 * bp.weight * sp.vn * sp.vn *
               ((-2.0 * lambda * u + g.squaredNorm()) * H +
                2.0 * (boundary_hessian(s, bp, sp.frame) * g).dot(sp.frame.normal));
      l1z -= bp.weight * (0.5 * g.squaredNorm() - lambda * u) * z;
    }
  });
  const Vector load = assemble_boundary_load(m, TagFilter::Neumann, [&](const BoundaryPoint& bp) {
    const auto sp = detail::smooth_point(s, geo, v, bp);
    const double unn = sp.frame.normal.dot(boundary_hessian(s, bp, sp.frame) * sp.frame.normal);
    return 2.0 * (sp.vn * unn - sp.dvn_ds * s.gradient(bp.point).dot(sp.frame.tangent));
  });
  const auto pinned = detail::normal_dirichlet_data(
      s, geo, [&](const Vec2& x, const Vec2& n) { return v.value(x).dot(n); });
  QuadraticFormSpec laplace{[](const ElementPoint&) { return Mat2::Identity().eval(); }, {}};
  const AuxSolution aux = solve_aux(s.mesh, assemble_bilinear(m, laplace), pinned, load);
  return local - aux.min_value + l1z;
}

/// Largest tangential component of V on the boundary relative to max |V|.
inline double tangential_fraction(const Mesh2D& m, const DeformationField& v) {
  const BoundaryGeometry geo(m);
  double vt = 0.0, vmax = 0.0;
  for_each_boundary_point(m, TagFilter::Both, [&](const BoundaryPoint& bp) {
    const Vec2 V = v.value(bp.point.x);
    vt = std::max(vt, std::abs(V.dot(geo.frame(bp).tangent)));
    vmax = std::max(vmax, V.norm());
  });
  return vmax > 0.0 ? vt / vmax : 0.0;
}

/// p-torsion formula for pure Dirichlet problems and normal V:
/// -(1/p) int V_n^2 (p lambda du/dn + |du/dn|^p H) - min int <P grad v, grad v>, v = -V_n du/dn.
inline double second_derivative_ptorsion(const StateSolution& s, const DeformationField& v,
                                         double rho_min = kDefaultRhoMin, double normal_tol = 1e-6) {
  if (s.deriv_pair.kind != ConvexPair::Kind::PTorsion) fail(ErrorCode::WrongPair, "the p-torsion formula needs the p-torsion integrand");
  const Mesh2D& m = *s.mesh;
  if (m.has_neumann())
    fail(ErrorCode::UnsupportedCombination, "the p-torsion formula covers pure Dirichlet problems only");
  if (tangential_fraction(m, v) > normal_tol) fail(ErrorCode::NonnormalV, "the p-torsion formula needs V normal to the boundary");
  const BoundaryGeometry geo(m);
  const double p = *s.deriv_pair.p;
  const double lambda = s.deriv_pair.lambda;
  double local = 0.0;
  for_each_boundary_point(m, TagFilter::Both, [&](const BoundaryPoint& bp) {
    const auto sp = detail::smooth_point(s, geo, v, bp);
    local -= bp.weight / p * sp.vn * sp.vn *
             (p * lambda * sp.dun + std::pow(std::abs(sp.dun), p) * sp.frame.curvature);
  });
  const auto pinned = detail::normal_dirichlet_data(
      s, geo, [&](const Vec2& x, const Vec2& n) { return v.value(x).dot(n); });
  const AuxSolution aux = solve_aux(s.mesh, assemble_bilinear(m, quadratic_form(s, rho_min)), pinned,
                                    Vector::Zero(m.num_p2_nodes()));
  return local - aux.min_value;
}

/// A scalar boundary function given through an extension to the plane.
struct BoundaryScalar {
  std::function<double(const Vec2&)> value;
  std::function<Vec2(const Vec2&)> gradient;

  static BoundaryScalar constant(double c) {
    return {[c](const Vec2&) { return c; }, [](const Vec2&) { return Vec2::Zero().eval(); }};
  }
  BoundaryScalar scaled(double t) const {
    auto v = value;
    auto g = gradient;
    return {[v, t](const Vec2& x) { return t * v(x); }, [g, t](const Vec2& x) { return Vec2(t * g(x)); }};
  }
};

/// Quadratic form l2(phi) for C^2 boundaries, with Gamma_D, Gamma_N and the auxiliary term.
inline double l2_form(const StateSolution& s, const BoundaryScalar& phi, double rho_min = kDefaultRhoMin) {
  const auto& pair = s.deriv_pair;
  if (!pair.has_f_conjugate()) fail(ErrorCode::ConjugateUnavailable, "l2 needs the conjugate f*");
  const Mesh2D& m = *s.mesh;
  const BoundaryGeometry geo(m);
  auto dsigma_hess = [&](const BoundaryPoint& bp, const BoundaryGeometry::Frame& fr) {
    const Mat2 hess = boundary_hessian(s, bp, fr);
    return std::make_pair(Mat2(pair.hess_f(s.gradient(bp.point)) * hess), hess);
  };
  double local = 0.0;
  for_each_boundary_point(m, TagFilter::Both, [&](const BoundaryPoint& bp) {
    const auto fr = geo.frame(bp);
    const Vec2& n = fr.normal;
    const Vec2& t = fr.tangent;
    const Vec2 g = s.gradient(bp.point);
    const Vec2 sig = pair.grad_f(g);
    const double dun = g.dot(n);
    const double ph = phi.value(bp.point.x);
    const auto [dsigma, hess] = dsigma_hess(bp, fr);
    const double dsnn = (dsigma * n).dot(n);
    if (bp.tag == BoundaryTag::Dirichlet) {
      local += bp.weight * ph * ph * (dun * dsnn + pair.f_conjugate(sig) * fr.curvature);
    } else {
      const double dph = phi.gradient(bp.point.x).dot(t);
      const double ddun = (hess * t).dot(n) + fr.curvature * g.dot(t);  // d/ds <grad u, n>
      const double d_phi2_dun = 2.0 * ph * dph * dun + ph * ph * ddun;
      local += bp.weight * (sig.dot(t) * d_phi2_dun -
                            ph * ph * ((hess * sig).dot(n) + (pair.f(g) + pair.g(s.value(bp.point))) * fr.curvature +
                                       dun * dsnn));
    }
  });
  const Vector load = assemble_boundary_load(m, TagFilter::Neumann, [&](const BoundaryPoint& bp) {
    const auto fr = geo.frame(bp);
    const Vec2 sig = s.sigma(bp.point);
    const double ph = phi.value(bp.point.x);
    return 2.0 * (ph * (dsigma_hess(bp, fr).first * fr.normal).dot(fr.normal) -
                  sig.dot(fr.tangent) * phi.gradient(bp.point.x).dot(fr.tangent));
  });
  const auto pinned = detail::normal_dirichlet_data(s, geo, [&](const Vec2& x, const Vec2&) { return phi.value(x); });
  const AuxSolution aux = solve_aux(s.mesh, assemble_bilinear(m, quadratic_form(s, rho_min)), pinned, load);
  return local - aux.min_value;
}

// ---------------------------------------------------------------------------
// Report

struct DerivativeReport {
  double J_value = 0.0;
  double J1_volume = 0.0;
  std::optional<double> J1_boundary;
  double J2_volume = 0.0;
  std::optional<double> J2_boundary;
  std::optional<double> J2_special;
  std::string special_route;  // "torsion", "p_torsion" or empty
  std::optional<double> fd_first;
  std::optional<double> fd_second;
  std::optional<double> fd_first_error;
  std::optional<double> fd_second_error;
  double divA_residual = 0.0;
  double divB_residual = 0.0;
  std::optional<double> route_disagreement;
  double h = 0.0;
  std::vector<double> eps;
  std::vector<std::string> notes;
};

}  // namespace shapehess
