#pragma once

#include "shapehess/error.hpp"
#include "shapehess/fem.hpp"
#include "shapehess/integrands.hpp"
#include "shapehess/mesh.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace shapehess {

struct NewtonReport {
  int iterations = 0;
  double decrement = 0.0;          // final Newton decrement sqrt(R . T^{-1} R)
  double residual = 0.0;           // final Euclidean norm of the free residual
  std::vector<double> energies;    // energy before each step and after the last
};

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 50;
  double backtrack = 0.5;
  double armijo = 1e-4;
  std::optional<Vector> initial;   // initial dof vector; Dirichlet entries are reset to zero
};

/// Minimizer u of int f(grad u) + g(u) over P2 functions vanishing on Gamma_D,
/// with the recovered gradient and J = -min.
///
/// `pair` is the integrand the state was solved with; `deriv_pair` drops the
/// p-torsion regularization and is the one the boundary formulas use.
struct StateSolution {
  MeshPtr mesh;
  ConvexPair pair;
  ConvexPair deriv_pair;
  FEFunction u;
  VectorFEFunction grad_u;
  double J_value = 0.0;
  NewtonReport newton;

  Vec2 raw_gradient(const ElementPoint& p) const { return u.gradient(p); }
  Vec2 gradient(const ElementPoint& p) const { return grad_u.value(p); }
  Mat2 hessian(const ElementPoint& p) const { return symmetrized(grad_u.jacobian(p)); }
  Vec2 sigma(const ElementPoint& p) const { return deriv_pair.grad_f(gradient(p)); }
  double value(const ElementPoint& p) const { return u.value(p); }
};

namespace detail {

inline double free_norm(const Vector& r, const DofMap& dofs) {
  double s = 0.0;
  for (int i = 0; i < r.size(); ++i)
    if (!dofs.is_dirichlet[i]) s += r[i] * r[i];
  return std::sqrt(s);
}

inline void zero_dirichlet(Vector& r, const DofMap& dofs) {
  for (int d : dofs.dirichlet_dofs) r[d] = 0.0;
}

// Best multiple c * w of a fixed shape w, by safeguarded Newton on E(c w).
inline Vector scaled_guess(const Mesh2D& mesh, const MeshPtr& ptr, const ConvexPair& pair, const Vector& w) {
  double c = 1.0;
  auto energy = [&](double s) { return assemble_energy(mesh, pair, FEFunction(ptr, s * w)); };
  double e = energy(c);
  for (int k = 0; k < 60; ++k) {
    const FEFunction cur(ptr, c * w);
    const double d1 = assemble_residual(mesh, pair, cur).dot(w);
    const double d2 = w.dot(assemble_tangent(mesh, pair, cur) * w);
    if (!(d2 > 0.0)) break;
    double step = -d1 / d2;
    if (std::abs(step) <= 1e-12 * std::abs(c)) break;
    while (std::abs(step) > 1e-14) {
      const double en = energy(c + step);
      if (en <= e) {
        c += step;
        e = en;
        break;
      }
      step *= 0.5;
    }
  }
  return c * w;
}

}  // namespace detail

/// Damped Newton on the discrete energy with Armijo backtracking; converged when
/// the Newton decrement drops below tol.
inline StateSolution solve_state(MeshPtr mesh, const ConvexPair& pair, const SolveOptions& opt = {}) {
  const Mesh2D& m = *mesh;
  const DofMap dofs(m);
  const int n = dofs.n_dofs;
  Vector u = Vector::Zero(n);
  if (opt.initial) {
    if (opt.initial->size() != n) fail(ErrorCode::InvalidArgument, "initial guess size mismatch");
    u = *opt.initial;
    for (int d : dofs.dirichlet_dofs) u[d] = 0.0;
  } else if (pair.kind == ConvexPair::Kind::PTorsion && *pair.p != 2.0) {
    // Laplace shape with the right amplitude; Newton from zero would start on the flat regularized core.
    const SpdSolver lap(assemble_stiffness(m), dofs.dirichlet_dofs);
    const Vector load = assemble_load(m, [&](const ElementPoint&) { return -pair.dg(0.0); });
    const Vector w = lap.solve(load);
    if (w.norm() > 0.0) u = detail::scaled_guess(m, mesh, pair, w);
  }

  NewtonReport report;
  double energy = assemble_energy(m, pair, FEFunction(mesh, u));
  report.energies.push_back(energy);
  for (int it = 0;; ++it) {
    const FEFunction cur(mesh, u);
    Vector r = assemble_residual(m, pair, cur);
    detail::zero_dirichlet(r, dofs);
    report.residual = r.norm();
    if (report.residual == 0.0) {
      report.decrement = 0.0;
      break;
    }
    const SpdSolver tangent(assemble_tangent(m, pair, cur), dofs.dirichlet_dofs);
    std::vector<Constraint> zero;
    for (int d : dofs.dirichlet_dofs) zero.push_back({d, 0.0});
    const Vector step = tangent.solve(-r, zero);
    const double slope = r.dot(step);  // = -decrement^2
    report.decrement = std::sqrt(std::max(0.0, -slope));
    if (report.decrement <= opt.tol) break;
    if (it >= opt.max_iter)
      fail(ErrorCode::NoConvergence, "Newton stopped after " + std::to_string(opt.max_iter) +
                                         " iterations with decrement " + std::to_string(report.decrement));
    double t = 1.0;
    double trial = assemble_energy(m, pair, FEFunction(mesh, u + step));
    // Below roundoff level the energy cannot discriminate; take the full step.
    const double noise = 1e-13 * (std::abs(energy) + 1e-300);
    if (-slope > noise) {
      while (trial > energy + opt.armijo * t * slope && t > 1e-12) {
        t *= opt.backtrack;
        trial = assemble_energy(m, pair, FEFunction(mesh, u + t * step));
      }
    }
    u += t * step;
    energy = trial;
    report.energies.push_back(energy);
    report.iterations = it + 1;
  }

  StateSolution s;
  s.mesh = mesh;
  s.pair = pair;
  s.deriv_pair = for_derivatives(pair);
  s.u = FEFunction(mesh, u);
  s.grad_u = recover_gradient(s.u);
  s.J_value = -energy;
  s.newton = report;
  return s;
}

inline StateSolution solve_state(const Mesh2D& mesh, const ConvexPair& pair, const SolveOptions& opt = {}) {
  return solve_state(std::make_shared<const Mesh2D>(mesh), pair, opt);
}

struct OptimalityDiagnostics {
  double el_residual = 0.0;            // Euclidean norm of the discrete Euler-Lagrange residual on free dofs
  double el_residual_recovered = 0.0;  // same, with sigma from the recovered gradient
  std::optional<double> duality_gap;   // |J - int f*(sigma) + g*(div sigma)|, relative to |J|
  std::optional<double> feasibility;   // linear g: |int (div sigma + lambda)|
  double neumann_flux = 0.0;           // int_{Gamma_N} |sigma . n|
};

inline OptimalityDiagnostics optimality_diagnostics(const StateSolution& s) {
  const Mesh2D& m = *s.mesh;
  const DofMap dofs(m);
  OptimalityDiagnostics d;
  Vector r = assemble_residual(m, s.pair, s.u);
  d.el_residual = detail::free_norm(r, dofs);
  const Vector rr = assemble_load(
      m, [&](const ElementPoint& p) { return s.deriv_pair.dg(s.value(p)); },
      [&](const ElementPoint& p) { return s.sigma(p); });
  d.el_residual_recovered = detail::free_norm(rr, dofs);

  d.neumann_flux = boundary_integral(m, TagFilter::Neumann, std::function<double(const BoundaryPoint&)>(
                                                                [&](const BoundaryPoint& bp) {
                                                                  return std::abs(s.sigma(bp.point).dot(bp.normal));
                                                                }));

  // div sigma of the recovered field: tr(hess_f(G) DG)
  auto div_sigma = [&](const ElementPoint& p) {
    return (s.deriv_pair.hess_f(s.gradient(p)) * s.grad_u.jacobian(p)).trace();
  };
  if (s.deriv_pair.g_linear) {
    d.feasibility = std::abs(integrate(m, [&](const ElementPoint& p) { return div_sigma(p) + s.deriv_pair.lambda; }));
  }
  if (s.deriv_pair.has_f_conjugate() && (s.deriv_pair.g_linear || s.deriv_pair.g_conjugate)) {
    const double dual = integrate(m, [&](const ElementPoint& p) {
      double v = s.deriv_pair.f_conjugate(s.sigma(p));
      if (!s.deriv_pair.g_linear) v += s.deriv_pair.g_conjugate(div_sigma(p));
      return v;
    });
    d.duality_gap = std::abs(s.J_value - dual) / std::max(std::abs(s.J_value), 1e-300);
    if (s.J_value == 0.0 && dual == 0.0) d.duality_gap = 0.0;
  }
  return d;
}

/// L2 norm of the recovered Hessian over elements whose centroid is at least
/// `margin` away from the boundary vertices.
inline double interior_hessian_l2(const StateSolution& s, double margin) {
  const Mesh2D& m = *s.mesh;
  std::vector<Vec2> bnd;
  for (int i = 0; i < m.num_vertices(); ++i)
    if (m.vertex_on_boundary()[i]) bnd.push_back(m.vertices()[i]);
  const double sq = integrate(m, [&](const ElementPoint& p) {
    const Vec2 c = bary_to_point(m, p.element, Eigen::Vector3d::Constant(1.0 / 3.0));
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& b : bnd) dist = std::min(dist, (b - c).norm());
    return dist >= margin ? s.hessian(p).squaredNorm() : 0.0;
  });
  return std::sqrt(sq);
}

}  // namespace shapehess
