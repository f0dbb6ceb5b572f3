// Acceptance run: one PASS/FAIL line per criterion, followed by the measured numbers.

#include "shapehess/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>

using namespace shapehess;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::vector<std::string>& details) {
  std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << title << '\n';
  for (const auto& d : details) std::cout << "    " << d << '\n';
  std::cout.flush();
  if (!pass) ++failures;
}

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

MeshPtr shared(Mesh2D m) { return std::make_shared<const Mesh2D>(std::move(m)); }

struct Timed {
  StateSolution state;
  double seconds;
};

Timed timed_solve(Mesh2D m, const ConvexPair& pair) {
  const auto t0 = std::chrono::steady_clock::now();
  auto s = solve_state(shared(std::move(m)), pair);
  return {std::move(s), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

const StateSolution& disk(double h) {
  static std::map<double, StateSolution> cache;
  auto it = cache.find(h);
  if (it == cache.end()) it = cache.emplace(h, solve_state(shared(generate_disk(1.0, h)), make_torsion(1.0))).first;
  return it->second;
}

// Criterion 1: closed-form disk values and error reduction under refinement.
void criterion1() {
  const double exact[3] = {kPi / 16.0, kPi / 4.0, 3.0 * kPi / 4.0};
  const char* names[3] = {"J", "J'(V=x)", "J''(V=x)"};
  double err[2][3];
  double worst_time = 0.0;
  for (int l = 0; l < 2; ++l) {
    const double h = 0.05 / (1 << l);
    const auto t = timed_solve(generate_disk(1.0, h), make_torsion(1.0));
    worst_time = std::max(worst_time, t.seconds);
    const auto v = fields::dilation();
    const double val[3] = {t.state.J_value, first_derivative_volume(t.state, v), second_derivative_volume(t.state, v)};
    for (int k = 0; k < 3; ++k) err[l][k] = rel(val[k], exact[k]);
  }
  bool pass = worst_time < 10.0;
  std::vector<std::string> d;
  for (int k = 0; k < 3; ++k) {
    const double ratio = err[0][k] / err[1][k];
    pass = pass && err[0][k] <= 1e-2 && ratio >= 3.0;
    d.push_back(std::string(names[k]) + ": rel error " + num(err[0][k]) + " at h=0.05, " + num(err[1][k]) +
                " at h=0.025, reduction " + num(ratio));
  }
  d.push_back("slowest solve " + num(worst_time) + " s");
  report(1, "disk torsion closed-form values, refinement reduction >= 3", pass, d);
}

struct RouteCase {
  std::string name;
  std::function<Mesh2D(double)> mesh;
  DeformationField v;
};

std::vector<RouteCase> route_cases() {
  return {{"(a) Dirichlet disk, V=x", [](double h) { return generate_disk(1.0, h); }, fields::dilation()},
          {"(b) half-Neumann disk, V=n", [](double h) { return generate_disk(1.0, h, 0.5); },
           fields::ellipse_normal(1.0, 1.0)},
          {"(c) ellipse 1.5x1, polynomial V", [](double h) { return generate_ellipse(1.5, 1.0, h); },
           fields::polynomial({0.1, 0.3, -0.2, 0.0, 0.4}, {-0.2, 0.1, 0.5, 0.3})}};
}

// Criteria 2 and 3 share the states at h = 0.05.
void criteria2and3() {
  bool pass2 = true, pass3 = true;
  std::vector<std::string> d2, d3;
  for (const auto& c : route_cases()) {
    double dis1[2], dis2[2];
    for (int l = 0; l < 2; ++l) {
      const auto s = solve_state(shared(c.mesh(0.05 / (1 << l))), make_torsion(1.0));
      const double j1 = first_derivative_volume(s, c.v), j2 = second_derivative_volume(s, c.v);
      dis1[l] = rel(first_derivative_boundary(s, c.v), j1);
      dis2[l] = rel(second_derivative_boundary(s, c.v), j2);
      if (l == 0) {
        const auto fd = fd_sweep(s, c.v, default_eps_list(), j1);
        const double e = rel(*fd.J2_fd, j2);
        pass3 = pass3 && e <= 1e-2;
        d3.push_back(c.name + ": |fd_second - J2_volume|/|J2| = " + num(e) + " (J2_volume " + num(j2) + ")");
      }
    }
    const bool ok = dis1[0] <= 1e-2 && dis2[0] <= 2e-2 && dis1[1] < dis1[0] && dis2[1] < dis2[0];
    pass2 = pass2 && ok;
    d2.push_back(c.name + ": J1 " + num(dis1[0]) + " -> " + num(dis1[1]) + ", J2 " + num(dis2[0]) + " -> " +
                 num(dis2[1]) + (ok ? "" : "  <- fails"));
  }
  d2.push_back("disagreements at h=0.05 -> h=0.025, relative to the volume route");
  report(2, "volume vs boundary route agreement", pass2, d2);

  // continuum slope of the one-sided quotient on disk dilation
  const auto& s = disk(0.05);
  const auto v = fields::dilation();
  const auto fd = fd_sweep(s, v, default_eps_list(), first_derivative_volume(s, v));
  const double slope = fitted_slope(fd.eps_list, fd.r_eps);
  const bool slope_ok = rel(slope, kPi / 2.0) <= 0.1;
  d3.push_back("slope of r_eps vs eps on disk dilation: " + num(slope) + " (pi/2 = " + num(kPi / 2.0) + ")");
  report(3, "finite-difference equivalence", pass3 && slope_ok, d3);
}

// Criterion 4: residual and optimality checks with refinement slopes.
void criterion4() {
  const std::vector<double> hs{0.1, 0.05, 0.025};
  std::vector<double> h_disk, div_a, div_b, h_ann, flux;
  double gap = 0.0;
  for (double h : hs) {
    const auto& s = disk(h);
    h_disk.push_back(mesh_size(*s.mesh));
    div_a.push_back(divA_residual(s));
    div_b.push_back(check_divB(s, fields::dilation()));
    if (h == 0.05) gap = *optimality_diagnostics(s).duality_gap;
    const auto a = solve_state(shared(generate_annulus(0.5, 1.0, h)), make_torsion(1.0));
    h_ann.push_back(mesh_size(*a.mesh));
    flux.push_back(optimality_diagnostics(a).neumann_flux);
  }
  const double sa = log_slope(h_disk, div_a), sb = log_slope(h_disk, div_b), sf = log_slope(h_ann, flux);
  const bool pass = div_a[1] <= 1e-2 && sa >= 0.8 && div_b[1] <= 1e-2 && sb >= 0.8 && flux[1] <= 1e-2 && sf >= 1.0 &&
                    gap <= 1e-3;
  report(4, "structural invariants", pass,
         {"div A residual " + num(div_a[1]) + " at h=0.05, slope " + num(sa),
          "div B residual (V=x) " + num(div_b[1]) + " at h=0.05, slope " + num(sb),
          "Neumann flux on annulus inner circle " + num(flux[1]) + " at h=0.05, slope " + num(sf),
          "duality gap (torsion) " + num(gap)});
}

// Criterion 5: null directions and homogeneity.
void criterion5() {
  const auto& s = disk(0.05);
  bool pass = true;
  std::vector<std::string> d;
  const std::vector<std::pair<std::string, DeformationField>> nulls{
      {"V=0", fields::zero()},
      {"V=(0.5,-0.3)", fields::constant(Vec2(0.5, -0.3))},
      {"bump r=0.5 at (0.1,0)", fields::radial_bump(Vec2(0.1, 0.0), 0.5)}};
  for (const auto& [name, v] : nulls) {
    const double scale = cli_detail::field_scale(*s.mesh, v);
    const double tol = 1e-6 * (std::abs(s.J_value) + scale * scale);
    const double j1 = first_derivative_volume(s, v), j2 = second_derivative_volume(s, v);
    const double b1 = first_derivative_boundary(s, v), b2 = second_derivative_boundary(s, v);
    const bool ok = std::abs(j1) <= tol && std::abs(j2) <= tol;
    pass = pass && ok;
    d.push_back(name + ": volume |J'| " + num(std::abs(j1)) + ", |J''| " + num(std::abs(j2)) + "; boundary |J'| " +
                num(std::abs(b1)) + ", |J''| " + num(std::abs(b2)) + "; tolerance " + num(tol) +
                (ok ? "" : "  <- fails"));
  }
  const auto v = fields::polynomial({0.1, 0.3, -0.2, 0.0, 0.4}, {-0.2, 0.1, 0.5, 0.3});
  const double j1 = first_derivative_volume(s, v), j2 = second_derivative_volume(s, v);
  const double b1 = first_derivative_boundary(s, v), b2 = second_derivative_boundary(s, v);
  double worst = 0.0;
  for (double t : {-1.0, 2.0, 5.0}) {
    const auto vt = v.scaled(t);
    worst = std::max({worst, rel(first_derivative_volume(s, vt), t * j1), rel(second_derivative_volume(s, vt), t * t * j2),
                      rel(first_derivative_boundary(s, vt), t * b1), rel(second_derivative_boundary(s, vt), t * t * b2)});
  }
  pass = pass && worst <= 1e-8;
  d.push_back("homogeneity t in {-1, 2, 5}, volume and boundary routes: worst relative defect " + num(worst));
  report(5, "null directions and homogeneity", pass, d);
}

// Criterion 6: Gamma-limit minimizer check on two meshes.
void criterion6() {
  const auto v = fields::radial_bump(Vec2(0.0, 0.1), 0.5);
  const auto& eps = default_eps_list();
  bool pass = true;
  std::vector<std::string> d;
  for (double h : {0.1, 0.05}) {
    const auto dist = gamma_limit_check(disk(h), v, eps);
    bool decreasing = true;
    std::string row;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      decreasing = decreasing && (i == 0 || dist[i] < dist[i - 1]);
      row += (i ? ", " : "") + num(dist[i]);
    }
    const double slope = log_slope(eps, dist);
    pass = pass && decreasing && slope >= 0.9;
    d.push_back("h=" + num(h) + ": distances " + row + ", slope " + num(slope));
  }
  report(6, "Gamma-limit minimizer check", pass, d);
}

// Criterion 7: p-torsion on the unit disk.
void criterion7() {
  const auto s = solve_state(shared(generate_disk(1.0, 0.05)), make_p_torsion(3.0, 1.0));
  const double j_exact = 2.0 * kPi * std::sqrt(2.0) / 21.0;
  const auto v = fields::ellipse_normal(1.0, 1.0);
  const double special = second_derivative_ptorsion(s, v);
  const auto fd = fd_sweep(s, v, default_eps_list(), first_derivative_volume(s, v));
  const auto sweep = rho_min_sweep(s, v, {1e-4, 1e-5, 1e-6});
  const double spread = (*std::max_element(sweep.begin(), sweep.end()) - *std::min_element(sweep.begin(), sweep.end())) /
                        std::abs(sweep.back());
  const auto s2 = solve_state(shared(generate_disk(1.0, 0.05)), make_p_torsion(2.0, 1.0));
  const double p2 = rel(second_derivative_ptorsion(s2, v), second_derivative_torsion(disk(0.05), v));
  const bool pass = rel(s.J_value, j_exact) <= 1e-2 && rel(special, *fd.J2_fd) <= 5e-2 && spread < 1e-2 && p2 <= 1e-8;
  report(7, "p-torsion, p=3", pass,
         {"J " + num(s.J_value) + " vs 2 pi sqrt2 / 21 = " + num(j_exact) + ", rel " + num(rel(s.J_value, j_exact)),
          "J''(V=n) formula " + num(special) + " vs fd " + num(*fd.J2_fd) + ", rel " + num(rel(special, *fd.J2_fd)),
          "rho_min sweep " + num(sweep[0]) + ", " + num(sweep[1]) + ", " + num(sweep[2]) + ", spread " + num(spread),
          "p=2 formula vs torsion formula, rel " + num(p2)});
}

// Criterion 8: l2 form against the torsion formula, and its homogeneity.
void criterion8() {
  const auto& s = disk(0.05);
  const double l2 = l2_form(s, BoundaryScalar::constant(1.0));
  const double tor = second_derivative_torsion(s, fields::ellipse_normal(1.0, 1.0));
  const BoundaryScalar phi{[](const Vec2& x) { return 1.0 + 0.5 * x.x() - 0.3 * x.y() * x.y(); },
                           [](const Vec2& x) { return Vec2(0.5, -0.6 * x.y()); }};
  const double a = l2_form(s, phi), b = l2_form(s, phi.scaled(2.5));
  const double hom = rel(b, 6.25 * a);
  report(8, "l2 form consistency", rel(l2, tor) <= 1e-2 && hom <= 1e-10,
         {"l2(1) " + num(l2) + " vs torsion formula " + num(tor) + ", rel " + num(rel(l2, tor)),
          "l2(2.5 phi) vs 6.25 l2(phi), rel " + num(hom)});
}

// Criterion 9: the CLI twice with four threads.
void criterion9() {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "shapehess_acceptance";
  fs::remove_all(base);
  const std::string cfg = std::string(SHAPEHESS_SOURCE_DIR) + "/examples_cfg/disk_torsion.toml";
  int codes[2];
  std::string text[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path out = base / ("run" + std::to_string(k));
    const std::string cmd =
        std::string(SHAPEHESS_CLI) + " --threads 4 derive --config " + cfg + " --out " + out.string();
    codes[k] = std::system(cmd.c_str());
    std::ifstream in(out / "derivatives.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    text[k] = ss.str();
  }
  const bool pass = codes[0] == 0 && codes[1] == 0 && !text[0].empty() && text[0] == text[1];
  report(9, "determinism of derive with --threads 4", pass,
         {"exit codes " + std::to_string(codes[0]) + ", " + std::to_string(codes[1]) + "; derivatives.csv " +
          std::to_string(text[0].size()) + " bytes, " + (text[0] == text[1] ? "identical" : "different")});
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    criterion1();
    criteria2and3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
  } catch (const std::exception& e) {
    std::cout << "aborted: " << e.what() << '\n';
    return 2;
  }
  std::cout << failures << " of 9 criteria failed; "
            << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) << " s\n";
  return failures == 0 ? 0 : 1;
}
