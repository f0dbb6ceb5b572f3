#include "shapehess/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace shapehess;
  CLI::App app{"Shape derivatives of convex variational energies"};
  app.require_subcommand(1);
  int threads = 1;
  unsigned seed = 1;
  app.add_option("--threads", threads, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed for randomized checks");

  struct Args {
    std::string config;
    std::string out;
  };
  Args solve_args, derive_args, validate_args, sweep_args;
  std::optional<int> levels;
  auto add = [&](const char* name, const char* help, Args& a) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", a.config, "TOML run configuration")->required();
    sub->add_option("--out", a.out, "Output directory (overrides output.dir)");
    return sub;
  };
  auto* solve = add("solve", "Solve the state problem", solve_args);
  auto* derive = add("derive", "Compute first and second shape derivatives by every route", derive_args);
  auto* validate = add("validate", "Finite-difference sweep and invariant checks", validate_args);
  auto* sweep = add("sweep", "Refinement study", sweep_args);
  sweep->add_option("--levels", levels, "Number of refinement levels")->check(CLI::Range(1, 8));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: CONFIG_ERROR: " << e.what() << '\n';
    return kExitConfig;
  }
  set_thread_count(threads);

  auto run = [&](const Args& a, auto&& fn) {
    return run_command(
        [&] {
          CommandContext ctx;
          ctx.config = load_config(a.config);
          ctx.out_dir = a.out.empty() ? ctx.config.output_dir : a.out;
          ctx.seed = seed;
          return fn(ctx);
        },
        std::cerr);
  };
  if (*solve) return run(solve_args, [](const CommandContext& c) { return cmd_solve(c); });
  if (*derive) return run(derive_args, [](const CommandContext& c) { return cmd_derive(c); });
  if (*validate) return run(validate_args, [](const CommandContext& c) { return cmd_validate(c); });
  return run(sweep_args, [&](const CommandContext& c) { return cmd_sweep(c, levels); });
}
