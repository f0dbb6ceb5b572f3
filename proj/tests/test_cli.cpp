#include "shapehess/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace shapehess;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("shapehess_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rows of a CSV file keyed by the first column.
std::map<std::string, std::vector<std::string>> rows(const fs::path& p) {
  std::map<std::string, std::vector<std::string>> out;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!cells.empty()) out[cells[0]] = cells;
  }
  return out;
}

int run(const std::string& toml, const fs::path& dir, int (*cmd)(const CommandContext&), std::string* err = nullptr) {
  std::ostringstream e;
  const int code = run_command(
      [&] {
        CommandContext ctx;
        ctx.config = parse_config(toml);
        ctx.out_dir = dir;
        return cmd(ctx);
      },
      e);
  if (err) *err = e.str();
  return code;
}

ErrorCode parse_error(const std::string& toml) {
  try {
    parse_config(toml);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  EXPECT_EQ(parse_config(""), RunConfig{});
}

TEST(Config, RoundTripsEveryKind) {
  RunConfig c;
  c.geometry.kind = "annulus";
  c.geometry.r_in = 0.3;
  c.geometry.inner = "dirichlet";
  c.integrand.kind = "anisotropic";
  c.integrand.A = {{{2.0, 0.5}, {0.5, 1.0}}};
  c.integrand.k = 0.7;
  c.deformation.kind = "polynomial";
  c.deformation.x = {0.1, 0.2};
  c.deformation.y = {-0.3};
  c.routes.special = false;
  c.validation.eps = {0.05, 0.01};
  c.validation.levels = 2;
  c.output_dir = "somewhere";
  EXPECT_EQ(parse_config(serialize_config(c)), c);

  RunConfig d;
  d.geometry.kind = "rectangle";
  d.geometry.dirichlet_sides = {"left", "top"};
  d.integrand.kind = "p_torsion";
  d.integrand.p = 4.5;
  d.deformation.kind = "bump";
  d.deformation.center = {0.25, 0.5};
  d.deformation.amplitude = 0.1 / 3.0;
  EXPECT_EQ(parse_config(serialize_config(d)), d);
}

TEST(Config, StrictKeysAndValues) {
  EXPECT_EQ(parse_error("[geometry]\nkind='disk'\nr_in=0.2\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[geometry]\nkind='torus'\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[geometry]\nh=-1\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[geometry]\nh='small'\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[solver]\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[validation]\neps=[0.01, 0.02]\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[validation]\nlevels=1.5\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[integrand]\nkind='p_torsion'\np=1.5\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[deformation]\nkind='dilation'\ncenter=[1]\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("geometry = 3\n"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[geometry\n"), ErrorCode::ConfigError);
}

TEST(Config, NormalPresetNeedsSmoothGeometry) {
  const auto c = parse_config("[geometry]\nkind='rectangle'\n[deformation]\nkind='normal'\n");
  EXPECT_THROW(build_field(c.deformation, c.geometry), Error);
  const auto e = parse_config("[geometry]\nkind='ellipse'\na=2\nb=1\n[deformation]\nkind='normal'\n");
  // on the ellipse boundary the preset is a multiple of the unit normal
  const auto v = build_field(e.deformation, e.geometry);
  const Vec2 x(2.0 * std::cos(0.7), std::sin(0.7));
  const Vec2 n = Vec2(x.x() / 4.0, x.y()).normalized();
  EXPECT_NEAR(std::abs(v.value(x).normalized().dot(n)), 1.0, 1e-14);
}

TEST(Commands, SolveDiskWritesState) {
  const auto dir = scratch("solve");
  ASSERT_EQ(run("[geometry]\nkind='disk'\nh=0.1\n", dir, cmd_solve), kExitOk);
  const auto summary = rows(dir / "summary.csv");
  EXPECT_NEAR(std::stod(summary.at("J_value")[1]), kPi / 16.0, 2e-3);
  const auto state = rows(dir / "state.csv");
  const auto mesh = generate_disk(1.0, 0.1);
  EXPECT_EQ(state.size(), static_cast<std::size_t>(mesh.num_p2_nodes()));
  // node 0 value against the exact state (1 - r^2)/4
  const auto& r0 = state.at("0");
  const double x = std::stod(r0[1]), y = std::stod(r0[2]);
  EXPECT_NEAR(std::stod(r0[3]), (1.0 - x * x - y * y) / 4.0, 1e-3);
  const auto vtk = slurp(dir / "fields.vtk");
  EXPECT_NE(vtk.find("DATASET UNSTRUCTURED_GRID"), std::string::npos);
  EXPECT_NE(vtk.find("POINTS " + std::to_string(mesh.num_p2_nodes())), std::string::npos);
  EXPECT_NE(vtk.find("SCALARS C_n"), std::string::npos);
}

TEST(Commands, DeriveDiskDilation) {
  const auto dir = scratch("derive");
  ASSERT_EQ(run("[geometry]\nkind='disk'\nh=0.1\n[validation]\neps=[0.04, 0.02]\n", dir, cmd_derive), kExitOk);
  const auto r = rows(dir / "derivatives.csv");
  const double exact = 3.0 * kPi / 4.0;
  for (const char* route : {"J2_volume", "J2_boundary", "J2_special", "fd_second"})
    EXPECT_NEAR(std::stod(r.at(route)[2]), exact, 2e-2 * exact) << route;
  EXPECT_NEAR(std::stod(r.at("J1_volume")[2]), kPi / 4.0, 1e-2);
  EXPECT_EQ(r.at("J2_special").back(), "torsion");
}

TEST(Commands, PTorsionWithNeumannIsUnsupported) {
  std::string err;
  const int code = run("[geometry]\nkind='disk'\nh=0.2\ndirichlet_fraction=0.5\n[integrand]\nkind='p_torsion'\n",
                       scratch("pt"), cmd_derive, &err);
  EXPECT_EQ(code, kExitUnsupported);
  EXPECT_EQ(err.rfind("error: UNSUPPORTED_COMBINATION:", 0), 0u);
}

TEST(Commands, ConfigErrorsExitTwo) {
  std::string err;
  EXPECT_EQ(run("[geometry]\nkind='mesh_file'\npath='/nonexistent/mesh.txt'\n", scratch("io"), cmd_solve, &err),
            kExitConfig);
  EXPECT_NE(err.find("geometry.path"), std::string::npos);
}

TEST(Commands, CoarseValidateFails) {
  const auto dir = scratch("coarse");
  EXPECT_EQ(run("[geometry]\nkind='disk'\nh=0.4\n", dir, cmd_validate), kExitCheckFailed);
  const auto inv = rows(dir / "invariants.csv");
  EXPECT_EQ(inv.at("route_disagreement_J1")[3], "false");
  EXPECT_EQ(inv.at("el_residual")[3], "true");
}

TEST(Commands, ValidateBumpPasses) {
  const auto dir = scratch("bump");
  const std::string cfg =
      "[geometry]\nkind='disk'\nh=0.1\n[deformation]\nkind='bump'\ncenter=[0.1, 0.0]\nradius=0.5\n"
      "[validation]\neps=[0.04, 0.02, 0.01]\n";
  EXPECT_EQ(run(cfg, dir, cmd_validate), kExitOk);
  const auto inv = rows(dir / "invariants.csv");
  EXPECT_EQ(inv.at("gamma_check_slope")[3], "true");
  EXPECT_EQ(inv.at("E_minimizer_gap")[3], "true");
  EXPECT_EQ(rows(dir / "fd_sweep.csv").count("0.040000000000000001"), 1u);
}

TEST(Commands, SweepOrders) {
  const auto dir = scratch("sweep");
  const auto sweep = [](const CommandContext& c) { return cmd_sweep(c); };
  ASSERT_EQ(run("[geometry]\nkind='disk'\nh=0.2\n[validation]\nlevels=3\n", dir, sweep), kExitOk);
  std::ifstream in(dir / "convergence.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "quantity,level,h,value,order");
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.rfind("J2_volume,2,", 0) == 0) {
      const double order = std::stod(line.substr(line.rfind(',') + 1));
      EXPECT_GT(order, 1.5);
    }
  }
  EXPECT_EQ(n, 15);
}

TEST(Commands, OutputIndependentOfThreadCount) {
  const std::string cfg = "[geometry]\nkind='disk'\nh=0.1\n[deformation]\nkind='spin'\nomega=0.5\n"
                          "[validation]\neps=[0.04, 0.02]\n";
  set_thread_count(1);
  const auto a = scratch("t1"), b = scratch("t4");
  ASSERT_EQ(run(cfg, a, cmd_derive), kExitOk);
  set_thread_count(4);
  ASSERT_EQ(run(cfg, b, cmd_derive), kExitOk);
  set_thread_count(1);
  EXPECT_EQ(slurp(a / "derivatives.csv"), slurp(b / "derivatives.csv"));
}

TEST(Format, SeventeenDigits) {
  EXPECT_EQ(fmt(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(fmt(kPi)), kPi);
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
}
