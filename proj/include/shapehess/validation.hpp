#pragma once

#include "shapehess/shape_calculus.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace shapehess {

// ---------------------------------------------------------------------------
// Finite-difference sweep

struct FdSweep {
  std::vector<double> eps_list;      // accepted values, decreasing
  std::vector<double> dropped_eps;   // rejected because the deformed mesh inverted
  double J0 = 0.0;
  std::vector<double> J_plus, J_minus;
  std::vector<double> r1_values;     // (J(eps) - J(-eps)) / (2 eps)
  std::vector<double> r2_values;     // (J(eps) - 2 J + J(-eps)) / eps^2
  std::vector<double> r_eps;         // one-sided 2 (J(eps) - J - eps J') / eps^2, when J' is known
  std::optional<double> J1_fd, J2_fd;
  double J1_error = 0.0, J2_error = 0.0;
  std::vector<int> newton_iterations;
};

inline const std::vector<double>& default_eps_list() {
  static const std::vector<double> eps{0.08, 0.04, 0.02, 0.01};
  return eps;
}

namespace detail {

// Richardson extrapolation of Q(eps) = Q0 + c eps^2 + ... from consecutive pairs;
// returns the last estimate and its distance to the previous one (or to the raw value).
inline std::pair<double, double> richardson_even(const std::vector<double>& eps, const std::vector<double>& q) {
  if (q.size() == 1) return {q[0], std::abs(q[0])};
  std::vector<double> est;
  for (std::size_t k = 1; k < q.size(); ++k) {
    const double a = eps[k - 1] * eps[k - 1], b = eps[k] * eps[k];
    est.push_back((a * q[k] - b * q[k - 1]) / (a - b));
  }
  const double last = est.back();
  const double err = est.size() > 1 ? std::abs(last - est[est.size() - 2]) : std::abs(last - q.back());
  return {last, err};
}

}  // namespace detail

/// Solves the state on deform(mesh, V, +-eps) for each eps, warm-started from the
/// undeformed solution (same dof numbering), and forms central quotients.
/// `first_derivative`, when given, also yields the one-sided quotients r_eps.
inline FdSweep fd_sweep(const StateSolution& state, const DeformationField& v,
                        std::vector<double> eps_list = default_eps_list(),
                        std::optional<double> first_derivative = std::nullopt, const SolveOptions& opt = {}) {
  if (eps_list.empty()) fail(ErrorCode::InvalidArgument, "eps_list is empty");
  std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
  if (!(eps_list.back() > 0.0) || std::adjacent_find(eps_list.begin(), eps_list.end()) != eps_list.end())
    fail(ErrorCode::InvalidArgument, "eps_list must hold distinct positive values");
  FdSweep out;
  out.J0 = state.J_value;
  SolveOptions warm = opt;
  warm.initial = state.u.values;
  for (double eps : eps_list) {
    double jp, jm;
    int iters = 0;
    try {
      const auto sp = solve_state(deform(*state.mesh, v, eps), state.pair, warm);
      const auto sm = solve_state(deform(*state.mesh, v, -eps), state.pair, warm);
      jp = sp.J_value;
      jm = sm.J_value;
      iters = sp.newton.iterations + sm.newton.iterations;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InvertedElement) throw;
      out.dropped_eps.push_back(eps);
      continue;
    }
    out.eps_list.push_back(eps);
    out.J_plus.push_back(jp);
    out.J_minus.push_back(jm);
    out.newton_iterations.push_back(iters);
    out.r1_values.push_back((jp - jm) / (2.0 * eps));
    out.r2_values.push_back((jp - 2.0 * out.J0 + jm) / (eps * eps));
    if (first_derivative) out.r_eps.push_back(2.0 * (jp - out.J0 - eps * *first_derivative) / (eps * eps));
  }
  if (!out.eps_list.empty()) {
    const auto [j1, e1] = detail::richardson_even(out.eps_list, out.r1_values);
    const auto [j2, e2] = detail::richardson_even(out.eps_list, out.r2_values);
    out.J1_fd = j1;
    out.J2_fd = j2;
    out.J1_error = e1;
    out.J2_error = e2;
  }
  return out;
}

/// Least-squares slope of y against x.
inline double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Slope of log y against log x.
inline double log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return fitted_slope(lx, ly);
}

// ---------------------------------------------------------------------------
// Gamma-limit check

/// L2 distances between w_eps = (u(x + eps V) - u(x)) / eps and <V, grad u> on the
/// same mesh, one per eps. V must vanish near the boundary.
inline std::vector<double> gamma_limit_check(const StateSolution& s, const DeformationField& v,
                                             const std::vector<double>& eps_list) {
  const Mesh2D& m = *s.mesh;
  double scale = 0.0, boundary = 0.0;
  for (int i = 0; i < m.num_vertices(); ++i) {
    const double a = v.value(m.vertices()[i]).norm();
    scale = std::max(scale, a);
    if (m.vertex_on_boundary()[i]) boundary = std::max(boundary, a);
  }
  for_each_boundary_point(m, TagFilter::Both, [&](const BoundaryPoint& bp) {
    boundary = std::max(boundary, v.value(bp.point.x).norm());
  });
  if (boundary > 1e-12 * std::max(scale, 1.0))
    fail(ErrorCode::SupportViolation, "deformation field does not vanish on the boundary");
  const PointLocator locator(m);
  std::vector<double> out;
  for (double eps : eps_list) {
    const double sq = integrate(m, [&](const ElementPoint& p) {
      const Vec2 V = v.value(p.x);
      const double target = V.dot(s.raw_gradient(p));
      if (V.squaredNorm() == 0.0) return target * target;
      const auto q = locator.locate(p.x + eps * V, 1e-10);
      if (!q) fail(ErrorCode::SupportViolation, "displaced point left the domain");
      const double w = (s.u.value(*q) - s.value(p)) / eps;
      return (w - target) * (w - target);
    });
    out.push_back(std::sqrt(sq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full report

struct ReportOptions {
  bool boundary_routes = true;
  bool special_route = true;
  bool finite_differences = true;
  std::vector<double> eps_list = default_eps_list();
  double rho_min = kDefaultRhoMin;
  SolveOptions solve;
};

/// Longest mesh edge.
inline double mesh_size(const Mesh2D& m) {
  double h = 0.0;
  for (const auto& e : m.edges()) h = std::max(h, (m.vertices()[e[1]] - m.vertices()[e[0]]).norm());
  return h;
}

/// Whether a Dirichlet and a Neumann edge share a vertex.
inline bool has_junctions(const Mesh2D& m) {
  for (int i = 0; i < m.num_vertices(); ++i) {
    if (!m.vertex_on_boundary()[i]) continue;
    const auto& info = m.boundary_vertex_info()[i];
    if (m.boundary_edges()[info.edge_in].tag != m.boundary_edges()[info.edge_out].tag) return true;
  }
  return false;
}

/// Largest weak residual of the row-wise divergence of A (which vanishes at the optimum).
inline double divA_residual(const StateSolution& s) {
  const auto a = tensor_A(s);
  double worst = 0.0;
  for (int row = 0; row < 2; ++row) {
    worst = std::max(worst, weak_divergence_residual(
                                *s.mesh, [&](const ElementPoint& p) { return Vec2(a(p).row(row).transpose()); },
                                [](const ElementPoint&) { return 0.0; }));
  }
  return worst;
}

/// J'' from the p-torsion formula for several weight floors.
inline std::vector<double> rho_min_sweep(const StateSolution& s, const DeformationField& v,
                                         const std::vector<double>& rho_values) {
  std::vector<double> out;
  for (double r : rho_values) out.push_back(second_derivative_ptorsion(s, v, r));
  return out;
}

inline DerivativeReport full_report(const StateSolution& s, const DeformationField& v, const ReportOptions& opt = {}) {
  DerivativeReport r;
  r.J_value = s.J_value;
  r.h = mesh_size(*s.mesh);
  r.J1_volume = first_derivative_volume(s, v);
  r.J2_volume = second_derivative_volume(s, v);
  r.divA_residual = divA_residual(s);
  r.divB_residual = check_divB(s, v);
  auto attempt = [&](const char* label, auto&& fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const Error& e) {
      r.notes.push_back(std::string(label) + ": " + std::string(to_string(e.code())));
      return std::nullopt;
    }
  };
  if (opt.boundary_routes) {
    r.J1_boundary = attempt("J1_boundary", [&] { return first_derivative_boundary(s, v); });
    r.J2_boundary = attempt("J2_boundary", [&] { return second_derivative_boundary_detail(s, v, opt.rho_min).value; });
    if (r.J2_boundary)
      r.route_disagreement = std::abs(r.J2_volume - *r.J2_boundary) / std::max(std::abs(r.J2_volume), 1e-300);
    if (has_junctions(*s.mesh))
      r.notes.push_back("Dirichlet/Neumann junctions present: boundary routes omit the junction singularity");
  }
  if (opt.special_route) {
    if (s.deriv_pair.kind == ConvexPair::Kind::Torsion) {
      r.special_route = "torsion";
      r.J2_special = attempt("J2_special", [&] { return second_derivative_torsion(s, v); });
    } else if (s.deriv_pair.kind == ConvexPair::Kind::PTorsion) {
      r.special_route = "p_torsion";
      r.J2_special = attempt("J2_special", [&] { return second_derivative_ptorsion(s, v, opt.rho_min); });
    }
  }
  if (opt.finite_differences) {
    const auto fd = fd_sweep(s, v, opt.eps_list, r.J1_volume, opt.solve);
    r.eps = fd.eps_list;
    for (double e : fd.dropped_eps) r.notes.push_back("eps " + std::to_string(e) + " dropped: INVERTED_ELEMENT");
    if (fd.J1_fd) {
      r.fd_first = fd.J1_fd;
      r.fd_second = fd.J2_fd;
      r.fd_first_error = fd.J1_error;
      r.fd_second_error = fd.J2_error;
    }
  }
  return r;
}

inline DerivativeReport full_report(MeshPtr mesh, const ConvexPair& pair, const DeformationField& v,
                                    const ReportOptions& opt = {}) {
  return full_report(solve_state(std::move(mesh), pair, opt.solve), v, opt);
}

}  // namespace shapehess
