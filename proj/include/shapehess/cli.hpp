#pragma once

#include "shapehess/validation.hpp"

#include <toml.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace shapehess {

// ---------------------------------------------------------------------------
// Run configuration

struct GeometryConfig {
  std::string kind = "disk";  // disk | ellipse | annulus | rectangle | mesh_file
  double h = 0.05;
  double radius = 1.0;
  double a = 1.5, b = 1.0;
  double dirichlet_fraction = 1.0;
  double r_in = 0.5, r_out = 1.0;
  std::string inner = "neumann", outer = "dirichlet";
  double width = 1.0, height = 1.0;
  std::vector<std::string> dirichlet_sides{"bottom", "right", "top", "left"};
  std::string path;
  bool operator==(const GeometryConfig&) const = default;
};

struct IntegrandConfig {
  std::string kind = "torsion";  // torsion | p_torsion | anisotropic
  double lambda = 1.0;
  double p = 3.0;
  double delta = 1e-4;
  std::array<std::array<double, 2>, 2> A{{{1.0, 0.0}, {0.0, 1.0}}};
  double k = 1.0;
  bool operator==(const IntegrandConfig&) const = default;
};

struct DeformationConfig {
  std::string kind = "dilation";  // zero | dilation | translation | normal | bump | spin | polynomial
  double scale = 1.0;
  std::array<double, 2> center{0.0, 0.0};
  std::array<double, 2> vector{1.0, 0.0};
  double radius = 0.5;
  double amplitude = 1.0;
  double omega = 1.0;
  std::vector<double> x, y;
  bool operator==(const DeformationConfig&) const = default;
};

struct RoutesConfig {
  bool boundary = true;
  bool special = true;
  bool finite_differences = true;
  bool operator==(const RoutesConfig&) const = default;
};

struct ValidationConfig {
  std::vector<double> eps = default_eps_list();
  std::vector<double> gamma_eps{0.08, 0.04, 0.02, 0.01};
  int levels = 3;
  double rho_min = kDefaultRhoMin;
  bool operator==(const ValidationConfig&) const = default;
};

struct RunConfig {
  GeometryConfig geometry;
  IntegrandConfig integrand;
  DeformationConfig deformation;
  RoutesConfig routes;
  ValidationConfig validation;
  std::string output_dir = "out";
  bool operator==(const RunConfig&) const = default;
};

namespace config_detail {

[[noreturn]] inline void config_error(const std::string& key, const std::string& what) {
  fail(ErrorCode::ConfigError, "config key '" + key + "': " + what);
}

inline void reject_unknown(const toml::table& t, const std::string& prefix, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : t) {
    const std::string key(k.str());
    if (!allowed.count(key)) config_error(prefix + key, "unknown key");
  }
}

inline const toml::table* subtable(const toml::table& root, const std::string& name) {
  const auto* node = root.get(name);
  if (!node) return nullptr;
  if (!node->is_table()) config_error(name, "expected a table");
  return node->as_table();
}

inline double get_number(const toml::table& t, const std::string& prefix, const std::string& key, double fallback) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (auto v = node->value<double>()) {
    if (!std::isfinite(*v)) config_error(prefix + key, "must be finite");
    return *v;
  }
  config_error(prefix + key, "expected a number");
}

inline bool get_bool(const toml::table& t, const std::string& prefix, const std::string& key, bool fallback) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (!node->is_boolean()) config_error(prefix + key, "expected true or false");
  return node->as_boolean()->get();
}

inline std::string get_string(const toml::table& t, const std::string& prefix, const std::string& key,
                              const std::string& fallback) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (!node->is_string()) config_error(prefix + key, "expected a string");
  return node->as_string()->get();
}

inline std::vector<double> get_numbers(const toml::table& t, const std::string& prefix, const std::string& key,
                                       const std::vector<double>& fallback) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (!node->is_array()) config_error(prefix + key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : *node->as_array()) {
    auto v = e.value<double>();
    if (!v || !std::isfinite(*v)) config_error(prefix + key, "expected an array of finite numbers");
    out.push_back(*v);
  }
  return out;
}

inline std::array<double, 2> get_pair(const toml::table& t, const std::string& prefix, const std::string& key,
                                      const std::array<double, 2>& fallback) {
  if (!t.get(key)) return fallback;
  const auto v = get_numbers(t, prefix, key, {});
  if (v.size() != 2) config_error(prefix + key, "expected two numbers");
  return {v[0], v[1]};
}

inline std::vector<std::string> get_strings(const toml::table& t, const std::string& prefix, const std::string& key,
                                            const std::vector<std::string>& fallback) {
  const auto* node = t.get(key);
  if (!node) return fallback;
  if (!node->is_array()) config_error(prefix + key, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *node->as_array()) {
    if (!e.is_string()) config_error(prefix + key, "expected an array of strings");
    out.push_back(e.as_string()->get());
  }
  return out;
}

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) config_error(key, what);
}

inline toml::array to_array(const std::vector<double>& v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}

}  // namespace config_detail

inline RunConfig parse_config(const std::string& text) {
  using namespace config_detail;
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML syntax error at line " << e.source().begin.line << ": " << e.description();
    fail(ErrorCode::ConfigError, msg.str());
  }
  reject_unknown(root, "", {"geometry", "integrand", "deformation", "routes", "validation", "output"});
  RunConfig c;

  if (const auto* g = subtable(root, "geometry")) {
    auto& o = c.geometry;
    o.kind = get_string(*g, "geometry.", "kind", o.kind);
    const std::map<std::string, std::set<std::string>> keys{
        {"disk", {"kind", "h", "radius", "dirichlet_fraction"}},
        {"ellipse", {"kind", "h", "a", "b", "dirichlet_fraction"}},
        {"annulus", {"kind", "h", "r_in", "r_out", "inner", "outer"}},
        {"rectangle", {"kind", "h", "width", "height", "dirichlet_sides"}},
        {"mesh_file", {"kind", "path"}}};
    if (!keys.count(o.kind)) config_error("geometry.kind", "expected disk, ellipse, annulus, rectangle or mesh_file");
    reject_unknown(*g, "geometry.", keys.at(o.kind));
    o.h = get_number(*g, "geometry.", "h", o.h);
    require(o.h > 0.0, "geometry.h", "must be positive");
    o.radius = get_number(*g, "geometry.", "radius", o.radius);
    require(o.radius > 0.0, "geometry.radius", "must be positive");
    o.a = get_number(*g, "geometry.", "a", o.a);
    o.b = get_number(*g, "geometry.", "b", o.b);
    require(o.a > 0.0 && o.b > 0.0, "geometry.a", "semi-axes must be positive");
    o.dirichlet_fraction = get_number(*g, "geometry.", "dirichlet_fraction", o.dirichlet_fraction);
    require(o.dirichlet_fraction > 0.0 && o.dirichlet_fraction <= 1.0, "geometry.dirichlet_fraction",
            "must lie in (0, 1]");
    o.r_in = get_number(*g, "geometry.", "r_in", o.r_in);
    o.r_out = get_number(*g, "geometry.", "r_out", o.r_out);
    require(o.r_in > 0.0 && o.r_out > o.r_in, "geometry.r_in", "need 0 < r_in < r_out");
    o.inner = get_string(*g, "geometry.", "inner", o.inner);
    o.outer = get_string(*g, "geometry.", "outer", o.outer);
    for (const auto& [key, val] : {std::pair{"geometry.inner", o.inner}, std::pair{"geometry.outer", o.outer}})
      require(val == "dirichlet" || val == "neumann", key, "expected dirichlet or neumann");
    o.width = get_number(*g, "geometry.", "width", o.width);
    o.height = get_number(*g, "geometry.", "height", o.height);
    require(o.width > 0.0 && o.height > 0.0, "geometry.width", "rectangle sides must be positive");
    o.dirichlet_sides = get_strings(*g, "geometry.", "dirichlet_sides", o.dirichlet_sides);
    for (const auto& s : o.dirichlet_sides)
      require(s == "bottom" || s == "right" || s == "top" || s == "left", "geometry.dirichlet_sides",
              "sides are bottom, right, top, left");
    o.path = get_string(*g, "geometry.", "path", o.path);
    require(o.kind != "mesh_file" || !o.path.empty(), "geometry.path", "required for mesh_file");
  }

  if (const auto* t = subtable(root, "integrand")) {
    auto& o = c.integrand;
    o.kind = get_string(*t, "integrand.", "kind", o.kind);
    const std::map<std::string, std::set<std::string>> keys{{"torsion", {"kind", "lambda"}},
                                                            {"p_torsion", {"kind", "lambda", "p", "delta"}},
                                                            {"anisotropic", {"kind", "lambda", "A", "k"}}};
    if (!keys.count(o.kind)) config_error("integrand.kind", "expected torsion, p_torsion or anisotropic");
    reject_unknown(*t, "integrand.", keys.at(o.kind));
    o.lambda = get_number(*t, "integrand.", "lambda", o.lambda);
    o.p = get_number(*t, "integrand.", "p", o.p);
    require(o.p >= 2.0, "integrand.p", "must be at least 2");
    o.delta = get_number(*t, "integrand.", "delta", o.delta);
    require(o.delta >= 0.0, "integrand.delta", "must be non-negative");
    o.k = get_number(*t, "integrand.", "k", o.k);
    require(o.k > 0.0, "integrand.k", "must be positive");
    if (const auto* node = t->get("A")) {
      const auto* rows = node->as_array();
      require(rows && rows->size() == 2, "integrand.A", "expected [[a11, a12], [a21, a22]]");
      for (int i = 0; i < 2; ++i) {
        const auto* row = (*rows)[i].as_array();
        require(row && row->size() == 2, "integrand.A", "expected [[a11, a12], [a21, a22]]");
        for (int j = 0; j < 2; ++j) {
          auto v = (*row)[j].value<double>();
          require(v.has_value() && std::isfinite(*v), "integrand.A", "entries must be finite numbers");
          o.A[i][j] = *v;
        }
      }
    }
  }

  if (const auto* d = subtable(root, "deformation")) {
    auto& o = c.deformation;
    o.kind = get_string(*d, "deformation.", "kind", o.kind);
    const std::map<std::string, std::set<std::string>> keys{
        {"zero", {"kind"}},
        {"dilation", {"kind", "scale", "center"}},
        {"translation", {"kind", "vector"}},
        {"normal", {"kind"}},
        {"bump", {"kind", "center", "radius", "amplitude"}},
        {"spin", {"kind", "omega", "center"}},
        {"polynomial", {"kind", "x", "y"}}};
    if (!keys.count(o.kind))
      config_error("deformation.kind", "expected zero, dilation, translation, normal, bump, spin or polynomial");
    reject_unknown(*d, "deformation.", keys.at(o.kind));
    o.scale = get_number(*d, "deformation.", "scale", o.scale);
    o.center = get_pair(*d, "deformation.", "center", o.center);
    o.vector = get_pair(*d, "deformation.", "vector", o.vector);
    o.radius = get_number(*d, "deformation.", "radius", o.radius);
    require(o.radius > 0.0, "deformation.radius", "must be positive");
    o.amplitude = get_number(*d, "deformation.", "amplitude", o.amplitude);
    o.omega = get_number(*d, "deformation.", "omega", o.omega);
    o.x = get_numbers(*d, "deformation.", "x", o.x);
    o.y = get_numbers(*d, "deformation.", "y", o.y);
    require(o.x.size() <= 10 && o.y.size() <= 10, "deformation.x", "at most 10 coefficients per component");
  }

  if (const auto* r = subtable(root, "routes")) {
    reject_unknown(*r, "routes.", {"boundary", "special", "finite_differences"});
    c.routes.boundary = get_bool(*r, "routes.", "boundary", c.routes.boundary);
    c.routes.special = get_bool(*r, "routes.", "special", c.routes.special);
    c.routes.finite_differences = get_bool(*r, "routes.", "finite_differences", c.routes.finite_differences);
  }

  if (const auto* v = subtable(root, "validation")) {
    auto& o = c.validation;
    reject_unknown(*v, "validation.", {"eps", "gamma_eps", "levels", "rho_min"});
    o.eps = get_numbers(*v, "validation.", "eps", o.eps);
    o.gamma_eps = get_numbers(*v, "validation.", "gamma_eps", o.gamma_eps);
    for (const auto& [key, list] : {std::pair{"validation.eps", o.eps}, std::pair{"validation.gamma_eps", o.gamma_eps}}) {
      require(!list.empty(), key, "must not be empty");
      for (std::size_t i = 0; i < list.size(); ++i)
        require(list[i] > 0.0 && (i == 0 || list[i] < list[i - 1]), key, "must be positive and strictly decreasing");
    }
    if (const auto* node = v->get("levels")) {
      auto n = node->value<int64_t>();
      require(n.has_value() && node->is_integer() && *n >= 1 && *n <= 8, "validation.levels",
              "expected an integer between 1 and 8");
      o.levels = static_cast<int>(*n);
    }
    o.rho_min = get_number(*v, "validation.", "rho_min", o.rho_min);
    require(o.rho_min > 0.0 && o.rho_min < 1.0, "validation.rho_min", "must lie in (0, 1)");
  }

  if (const auto* out = subtable(root, "output")) {
    reject_unknown(*out, "output.", {"dir"});
    c.output_dir = get_string(*out, "output.", "dir", c.output_dir);
    require(!c.output_dir.empty(), "output.dir", "must not be empty");
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// TOML text holding exactly the keys that apply to the chosen kinds.
inline std::string serialize_config(const RunConfig& c) {
  using config_detail::to_array;
  toml::table g{{"kind", c.geometry.kind}};
  const auto& go = c.geometry;
  if (go.kind != "mesh_file") g.insert("h", go.h);
  if (go.kind == "disk") {
    g.insert("radius", go.radius);
    g.insert("dirichlet_fraction", go.dirichlet_fraction);
  } else if (go.kind == "ellipse") {
    g.insert("a", go.a);
    g.insert("b", go.b);
    g.insert("dirichlet_fraction", go.dirichlet_fraction);
  } else if (go.kind == "annulus") {
    g.insert("r_in", go.r_in);
    g.insert("r_out", go.r_out);
    g.insert("inner", go.inner);
    g.insert("outer", go.outer);
  } else if (go.kind == "rectangle") {
    g.insert("width", go.width);
    g.insert("height", go.height);
    toml::array sides;
    for (const auto& s : go.dirichlet_sides) sides.push_back(s);
    g.insert("dirichlet_sides", sides);
  } else {
    g.insert("path", go.path);
  }

  const auto& io = c.integrand;
  toml::table t{{"kind", io.kind}, {"lambda", io.lambda}};
  if (io.kind == "p_torsion") {
    t.insert("p", io.p);
    t.insert("delta", io.delta);
  } else if (io.kind == "anisotropic") {
    toml::array rows;
    for (const auto& r : io.A) rows.push_back(toml::array{r[0], r[1]});
    t.insert("A", rows);
    t.insert("k", io.k);
  }

  const auto& d = c.deformation;
  toml::table v{{"kind", d.kind}};
  auto pair = [](const std::array<double, 2>& p) { return toml::array{p[0], p[1]}; };
  if (d.kind == "dilation") {
    v.insert("scale", d.scale);
    v.insert("center", pair(d.center));
  } else if (d.kind == "translation") {
    v.insert("vector", pair(d.vector));
  } else if (d.kind == "bump") {
    v.insert("center", pair(d.center));
    v.insert("radius", d.radius);
    v.insert("amplitude", d.amplitude);
  } else if (d.kind == "spin") {
    v.insert("omega", d.omega);
    v.insert("center", pair(d.center));
  } else if (d.kind == "polynomial") {
    v.insert("x", to_array(d.x));
    v.insert("y", to_array(d.y));
  }

  toml::table routes{{"boundary", c.routes.boundary},
                     {"special", c.routes.special},
                     {"finite_differences", c.routes.finite_differences}};
  toml::table val{{"eps", to_array(c.validation.eps)},
                  {"gamma_eps", to_array(c.validation.gamma_eps)},
                  {"levels", c.validation.levels},
                  {"rho_min", c.validation.rho_min}};
  toml::table root{{"geometry", g},        {"integrand", t},  {"deformation", v},
                   {"routes", routes},     {"validation", val}, {"output", toml::table{{"dir", c.output_dir}}}};
  std::ostringstream out;
  out << root << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Building objects from the configuration

inline Mesh2D build_mesh(const GeometryConfig& g, double h) {
  auto tag = [](const std::string& s) { return s == "dirichlet" ? BoundaryTag::Dirichlet : BoundaryTag::Neumann; };
  if (g.kind == "disk") return generate_disk(g.radius, h, g.dirichlet_fraction);
  if (g.kind == "ellipse") return generate_ellipse(g.a, g.b, h, g.dirichlet_fraction);
  if (g.kind == "annulus") return generate_annulus(g.r_in, g.r_out, h, tag(g.inner), tag(g.outer));
  if (g.kind == "rectangle")
    return generate_rectangle(g.width, g.height, h, std::set<std::string>(g.dirichlet_sides.begin(), g.dirichlet_sides.end()));
  try {
    return read_mesh_file(g.path);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, "config key 'geometry.path': " + std::string(e.what()));
  }
}

inline ConvexPair build_pair(const IntegrandConfig& c) {
  if (c.kind == "torsion") return make_torsion(c.lambda);
  if (c.kind == "p_torsion") return make_p_torsion(c.p, c.lambda, c.delta);
  Mat2 a;
  a << c.A[0][0], c.A[0][1], c.A[1][0], c.A[1][1];
  if (!is_spd(a)) fail(ErrorCode::ConfigError, "config key 'integrand.A': must be symmetric positive definite");
  return make_anisotropic(a, c.k, c.lambda);
}

inline DeformationField build_field(const DeformationConfig& d, const GeometryConfig& g) {
  const Vec2 center(d.center[0], d.center[1]);
  if (d.kind == "zero") return fields::zero();
  if (d.kind == "dilation") return fields::dilation(d.scale, center);
  if (d.kind == "translation") return fields::constant(Vec2(d.vector[0], d.vector[1]));
  if (d.kind == "bump") return fields::radial_bump(center, d.radius, d.amplitude);
  if (d.kind == "spin") return fields::spin(d.omega, center);
  if (d.kind == "polynomial") return fields::polynomial(d.x, d.y);
  // normal
  if (g.kind == "disk") return fields::ellipse_normal(g.radius, g.radius);
  if (g.kind == "ellipse") return fields::ellipse_normal(g.a, g.b);
  if (g.kind == "annulus") return fields::annulus_normal(g.r_in, g.r_out);
  fail(ErrorCode::ConfigError, "config key 'deformation.kind': the normal preset needs a disk, ellipse or annulus");
}

// ---------------------------------------------------------------------------
// Writers

/// 17 significant digits, round-trips a double.
inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x + 0.0);  // no "-0"
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) fail(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << csv_field(cells[i]);
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

/// Legacy ASCII VTK of the P2 state on quadratic triangles (cell type 22).
/// Point data: u, |grad u|, sigma and C.n on boundary nodes (zero inside).
inline void write_vtk(const std::filesystem::path& path, const StateSolution& s,
                      const std::optional<DeformationField>& v = std::nullopt) {
  const Mesh2D& m = *s.mesh;
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  const int n = m.num_p2_nodes();
  out << "# vtk DataFile Version 3.0\nshapehess state\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << n << " double\n";
  for (int i = 0; i < n; ++i) {
    const Vec2 x = m.node(i);
    out << fmt(x.x()) << ' ' << fmt(x.y()) << " 0\n";
  }
  out << "CELLS " << m.num_triangles() << ' ' << 7 * m.num_triangles() << '\n';
  for (int t = 0; t < m.num_triangles(); ++t) {
    out << 6;
    for (int id : m.element_nodes(t)) out << ' ' << id;
    out << '\n';
  }
  out << "CELL_TYPES " << m.num_triangles() << '\n';
  for (int t = 0; t < m.num_triangles(); ++t) out << "22\n";

  std::vector<double> cn(n, 0.0);
  if (v) {
    const BoundaryGeometry geo(m);
    for (int b = 0; b < static_cast<int>(m.boundary_edges().size()); ++b) {
      const auto& e = m.boundary_edges()[b];
      const int ids[3] = {e.v[0], m.num_vertices() + m.boundary_info()[b].edge, e.v[1]};
      for (int k = 0; k < 3; ++k) {
        const BoundaryPoint bp = boundary_point(m, b, 0.5 * k, 0.0);
        const auto fr = geo.frame(bp);
        const auto variant = e.tag == BoundaryTag::Dirichlet ? CVariant::Dirichlet : CVariant::Neumann;
        cn[ids[k]] = field_C_at(s, *v, variant, bp.point, boundary_hessian(s, bp, fr)).dot(fr.normal);
      }
    }
  }
  out << "POINT_DATA " << n << '\n';
  out << "SCALARS u double 1\nLOOKUP_TABLE default\n";
  for (int i = 0; i < n; ++i) out << fmt(s.u.values[i]) << '\n';
  out << "SCALARS grad_norm double 1\nLOOKUP_TABLE default\n";
  for (int i = 0; i < n; ++i) out << fmt(std::hypot(s.grad_u.x.values[i], s.grad_u.y.values[i])) << '\n';
  out << "VECTORS sigma double\n";
  for (int i = 0; i < n; ++i) {
    const Vec2 sig = s.deriv_pair.grad_f(Vec2(s.grad_u.x.values[i], s.grad_u.y.values[i]));
    out << fmt(sig.x()) << ' ' << fmt(sig.y()) << " 0\n";
  }
  out << "SCALARS C_n double 1\nLOOKUP_TABLE default\n";
  for (int i = 0; i < n; ++i) out << fmt(cn[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Commands

/// Process exit codes.
enum ExitCode { kExitOk = 0, kExitCheckFailed = 1, kExitConfig = 2, kExitUnsupported = 3, kExitNumerical = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
    case ErrorCode::IoError:
      return kExitConfig;
    case ErrorCode::UnsupportedCombination:
    case ErrorCode::WrongPair:
    case ErrorCode::NonnormalV:
    case ErrorCode::ConjugateUnavailable:
    case ErrorCode::SupportViolation:
    case ErrorCode::UnsupportedOrder:
      return kExitUnsupported;
    default:
      return kExitNumerical;
  }
}

struct CommandContext {
  RunConfig config;
  std::filesystem::path out_dir;
  unsigned seed = 1;
};

namespace cli_detail {

inline std::filesystem::path prepare(const CommandContext& ctx) {
  std::error_code ec;
  std::filesystem::create_directories(ctx.out_dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create output directory '" + ctx.out_dir.string() + "'");
  return ctx.out_dir;
}

inline StateSolution solve(const RunConfig& c, double h) {
  return solve_state(build_mesh(c.geometry, h), build_pair(c.integrand));
}

// p-torsion formula scope, checked before any solve.
inline void check_scope(const RunConfig& c, const Mesh2D& mesh) {
  if (c.integrand.kind == "p_torsion" && c.routes.special && mesh.has_neumann())
    fail(ErrorCode::UnsupportedCombination, "the p-torsion derivative formula covers pure Dirichlet problems only");
}

inline ReportOptions report_options(const RunConfig& c, bool fd) {
  ReportOptions o;
  o.boundary_routes = c.routes.boundary;
  o.special_route = c.routes.special;
  o.finite_differences = fd && c.routes.finite_differences;
  o.eps_list = c.validation.eps;
  o.rho_min = c.validation.rho_min;
  return o;
}

// Size of V and DV on the mesh vertices, for scale-aware comparisons.
inline double field_scale(const Mesh2D& m, const DeformationField& v) {
  double s = 0.0;
  for (const auto& x : m.vertices()) s = std::max({s, v.value(x).norm(), v.jacobian(x).norm()});
  return s;
}

inline double rel_diff(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline std::string opt_fmt(const std::optional<double>& x) { return x ? fmt(*x) : ""; }

inline std::string join_notes(const std::vector<std::string>& notes) {
  std::string s;
  for (const auto& n : notes) s += (s.empty() ? "" : "; ") + n;
  return s;
}

}  // namespace cli_detail

/// state.csv, fields.vtk and summary.csv.
inline int cmd_solve(const CommandContext& ctx) {
  using namespace cli_detail;
  const auto dir = prepare(ctx);
  const auto& c = ctx.config;
  const auto s = solve(c, c.geometry.h);
  const auto d = optimality_diagnostics(s);
  {
    CsvWriter w(dir / "state.csv", {"node", "x", "y", "u", "grad_x", "grad_y"});
    for (int i = 0; i < s.mesh->num_p2_nodes(); ++i) {
      const Vec2 x = s.mesh->node(i);
      w.row({std::to_string(i), fmt(x.x()), fmt(x.y()), fmt(s.u.values[i]), fmt(s.grad_u.x.values[i]),
             fmt(s.grad_u.y.values[i])});
    }
  }
  write_vtk(dir / "fields.vtk", s, build_field(c.deformation, c.geometry));
  CsvWriter w(dir / "summary.csv", {"quantity", "value"});
  w.row({"J_value", fmt(s.J_value)});
  w.row({"newton_iterations", std::to_string(s.newton.iterations)});
  w.row({"newton_decrement", fmt(s.newton.decrement)});
  w.row({"el_residual", fmt(d.el_residual)});
  w.row({"el_residual_recovered", fmt(d.el_residual_recovered)});
  w.row({"duality_gap", opt_fmt(d.duality_gap)});
  w.row({"feasibility", opt_fmt(d.feasibility)});
  w.row({"neumann_flux", fmt(d.neumann_flux)});
  w.row({"h", fmt(mesh_size(*s.mesh))});
  w.row({"triangles", std::to_string(s.mesh->num_triangles())});
  w.row({"dofs", std::to_string(s.mesh->num_p2_nodes())});
  return kExitOk;
}

inline void write_derivatives(const std::filesystem::path& path, const DerivativeReport& r) {
  using cli_detail::opt_fmt;
  CsvWriter w(path, {"route", "order", "value", "residual", "h", "notes"});
  const std::string h = fmt(r.h);
  w.row({"J_value", "0", fmt(r.J_value), "", h, ""});
  w.row({"J1_volume", "1", fmt(r.J1_volume), fmt(r.divA_residual), h, ""});
  if (r.J1_boundary) w.row({"J1_boundary", "1", fmt(*r.J1_boundary), fmt(std::abs(*r.J1_boundary - r.J1_volume)), h, ""});
  w.row({"J2_volume", "2", fmt(r.J2_volume), fmt(r.divB_residual), h, ""});
  if (r.J2_boundary) w.row({"J2_boundary", "2", fmt(*r.J2_boundary), opt_fmt(r.route_disagreement), h, ""});
  if (r.J2_special)
    w.row({"J2_special", "2", fmt(*r.J2_special), fmt(std::abs(*r.J2_special - r.J2_volume)), h, r.special_route});
  if (r.fd_first) w.row({"fd_first", "1", fmt(*r.fd_first), opt_fmt(r.fd_first_error), h, ""});
  if (r.fd_second) w.row({"fd_second", "2", fmt(*r.fd_second), opt_fmt(r.fd_second_error), h, ""});
  w.row({"notes", "", "", "", h, cli_detail::join_notes(r.notes)});
}

/// derivatives.csv with columns route, order, value, residual, h, notes.
inline int cmd_derive(const CommandContext& ctx) {
  using namespace cli_detail;
  const auto dir = prepare(ctx);
  const auto& c = ctx.config;
  const auto mesh = std::make_shared<const Mesh2D>(build_mesh(c.geometry, c.geometry.h));
  check_scope(c, *mesh);
  const auto v = build_field(c.deformation, c.geometry);
  const auto r = full_report(mesh, build_pair(c.integrand), v, report_options(c, true));
  write_derivatives(dir / "derivatives.csv", r);
  return kExitOk;
}

struct InvariantRow {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

/// fd_sweep.csv and invariants.csv; exit 1 if any check fails.
inline int cmd_validate(const CommandContext& ctx) {
  using namespace cli_detail;
  const auto dir = prepare(ctx);
  const auto& c = ctx.config;
  const auto mesh = std::make_shared<const Mesh2D>(build_mesh(c.geometry, c.geometry.h));
  check_scope(c, *mesh);
  const auto v = build_field(c.deformation, c.geometry);
  const auto s = solve_state(mesh, build_pair(c.integrand));
  auto opt = report_options(c, false);
  const auto r = full_report(s, v, opt);
  const auto fd = fd_sweep(s, v, c.validation.eps, r.J1_volume);
  const auto diag = optimality_diagnostics(s);

  {
    CsvWriter w(dir / "fd_sweep.csv", {"eps", "J_plus", "J_minus", "r1", "r2", "r_eps", "newton_iterations"});
    for (std::size_t i = 0; i < fd.eps_list.size(); ++i)
      w.row({fmt(fd.eps_list[i]), fmt(fd.J_plus[i]), fmt(fd.J_minus[i]), fmt(fd.r1_values[i]), fmt(fd.r2_values[i]),
             fmt(fd.r_eps[i]), std::to_string(fd.newton_iterations[i])});
    for (double e : fd.dropped_eps) w.row({fmt(e), "", "", "", "", "", "INVERTED_ELEMENT"});
    if (fd.J1_fd) {
      w.row({"extrapolated", "", "", fmt(*fd.J1_fd), fmt(*fd.J2_fd), "", ""});
      w.row({"error", "", "", fmt(fd.J1_error), fmt(fd.J2_error), "", ""});
    }
  }

  std::vector<InvariantRow> rows;
  auto below = [&](const std::string& name, double value, double threshold) {
    rows.push_back({name, value, threshold, value <= threshold});
  };
  auto above = [&](const std::string& name, double value, double threshold) {
    rows.push_back({name, value, threshold, value >= threshold});
  };
  const double vs = field_scale(*mesh, v);
  const double floor1 = 1e-6 * (std::abs(s.J_value) + 1e-12) * std::max(vs, 1e-12);
  const double floor2 = floor1 * std::max(vs, 1e-12);
  below("el_residual", diag.el_residual, 1e-8);
  below("divA_residual", r.divA_residual, 1e-2);
  below("divB_residual", r.divB_residual, 1e-2);
  if (mesh->has_neumann()) below("neumann_flux", diag.neumann_flux, 1e-2);
  if (diag.duality_gap && (c.integrand.kind == "torsion" || (c.integrand.kind == "p_torsion" && c.integrand.p == 2.0)))
    below("duality_gap", *diag.duality_gap, 1e-3);
  if (r.J1_boundary) below("route_disagreement_J1", rel_diff(r.J1_volume, *r.J1_boundary, floor1), 1e-2);
  if (r.J2_boundary) below("route_disagreement_J2", rel_diff(r.J2_volume, *r.J2_boundary, floor2), 2e-2);
  if (r.J2_special) below("special_vs_volume_J2", rel_diff(r.J2_volume, *r.J2_special, floor2), 2e-2);
  if (fd.J1_fd) {
    below("fd_vs_volume_J1", rel_diff(r.J1_volume, *fd.J1_fd, floor1), 1e-2);
    below("fd_vs_volume_J2", rel_diff(r.J2_volume, *fd.J2_fd, floor2), 1e-2);
  }
  // homogeneity of the volume routes
  for (double t : {-1.0, 2.0}) {
    const auto vt = v.scaled(t);
    below("homogeneity_J1[t=" + fmt(t) + "]",
          std::abs(first_derivative_volume(s, vt) - t * r.J1_volume) / std::max(std::abs(t * r.J1_volume), floor1), 1e-8);
    below("homogeneity_J2[t=" + fmt(t) + "]",
          std::abs(second_derivative_volume(s, vt) - t * t * r.J2_volume) / std::max(std::abs(t * t * r.J2_volume), floor2),
          1e-8);
  }
  // E at its minimizer against seeded random FE functions vanishing on Gamma_D
  {
    const auto vol = second_derivative_volume_detail(s, v);
    const DofMap dofs(*mesh);
    std::mt19937 rng(ctx.seed);
    std::normal_distribution<double> normal;
    double worst_gap = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 10; ++k) {
      FEFunction w = vol.w;
      const double amp = 1e-3 * (1.0 + w.values.cwiseAbs().maxCoeff());
      for (int i = 0; i < w.values.size(); ++i)
        if (!dofs.is_dirichlet[i]) w.values[i] += amp * normal(rng);
      worst_gap = std::min(worst_gap, evaluate_E(s, v, w) - vol.min_E);
    }
    above("E_minimizer_gap", worst_gap, -1e-10 * (1.0 + std::abs(vol.min_E)));
  }
  // Gamma-limit check when V vanishes on the boundary
  try {
    const auto dist = gamma_limit_check(s, v, c.validation.gamma_eps);
    for (std::size_t i = 0; i < dist.size(); ++i) {
      const double bound = i == 0 ? std::numeric_limits<double>::infinity() : dist[i - 1];
      rows.push_back({"gamma_check[eps=" + fmt(c.validation.gamma_eps[i]) + "]", dist[i], bound,
                      i == 0 || dist[i] < bound || dist[i] == 0.0});
    }
    if (dist.size() > 1 && dist.back() > 0.0) above("gamma_check_slope", log_slope(c.validation.gamma_eps, dist), 0.9);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SupportViolation) throw;
  }

  bool ok = true;
  CsvWriter w(dir / "invariants.csv", {"check_name", "value", "threshold", "pass"});
  for (const auto& row : rows) {
    w.row({row.name, fmt(row.value), fmt(row.threshold), row.pass ? "true" : "false"});
    ok = ok && row.pass;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

/// convergence.csv: values per level h, h/2, ... and observed log2 orders.
/// Values use successive differences (three levels needed); route disagreements use ratios.
inline int cmd_sweep(const CommandContext& ctx, std::optional<int> levels_override = std::nullopt) {
  using namespace cli_detail;
  const auto dir = prepare(ctx);
  const auto& c = ctx.config;
  const int levels = levels_override.value_or(c.validation.levels);
  if (levels < 1) fail(ErrorCode::ConfigError, "config key 'validation.levels': must be at least 1");
  const auto v = build_field(c.deformation, c.geometry);
  const auto pair = build_pair(c.integrand);
  auto opt = report_options(c, false);
  std::vector<double> hs;
  std::map<std::string, std::vector<double>> values;
  std::vector<std::string> order{"J_value", "J1_volume", "J2_volume"};
  for (int l = 0; l < levels; ++l) {
    const double h = c.geometry.h / std::pow(2.0, l);
    const auto mesh = std::make_shared<const Mesh2D>(build_mesh(c.geometry, h));
    check_scope(c, *mesh);
    const auto r = full_report(mesh, pair, v, opt);
    hs.push_back(r.h);
    values["J_value"].push_back(r.J_value);
    values["J1_volume"].push_back(r.J1_volume);
    values["J2_volume"].push_back(r.J2_volume);
    if (r.J1_boundary) values["J1_disagreement"].push_back(std::abs(r.J1_volume - *r.J1_boundary));
    if (r.J2_boundary) values["J2_disagreement"].push_back(std::abs(r.J2_volume - *r.J2_boundary));
  }
  for (const char* name : {"J1_disagreement", "J2_disagreement"})
    if (values.count(name)) order.push_back(name);
  CsvWriter w(dir / "convergence.csv", {"quantity", "level", "h", "value", "order"});
  for (const auto& name : order) {
    const auto& q = values[name];
    const bool is_error = name.find("disagreement") != std::string::npos;
    for (int l = 0; l < static_cast<int>(q.size()); ++l) {
      std::string ord;
      if (is_error && l >= 1 && q[l] > 0.0 && q[l - 1] > 0.0) ord = fmt(std::log2(q[l - 1] / q[l]));
      if (!is_error && l >= 2) {
        const double d0 = std::abs(q[l - 1] - q[l - 2]), d1 = std::abs(q[l] - q[l - 1]);
        if (d0 > 0.0 && d1 > 0.0) ord = fmt(std::log2(d0 / d1));
      }
      w.row({name, std::to_string(l), fmt(hs[l]), fmt(q[l]), ord});
    }
  }
  return kExitOk;
}

/// Runs a command and maps errors to exit codes with one machine-readable line on stderr.
template <typename Fn>
int run_command(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: INTERNAL: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace shapehess
