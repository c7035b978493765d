#include "l1mbrl/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"L1-augmented model-based RL simulator"};
  app.require_subcommand(1);

  l1mbrl::CliOptions opts;
  std::string config;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config, "experiment config (JSON)")->required();
    sub->add_option("--seed-override", opts.seed_override, "replace the config seeds")
        ->delimiter(',');
    sub->add_option("--out", opts.out, "output root (default: config output_dir, then $" +
                                           std::string(l1mbrl::kOutputRootEnv) + ", then runs)");
    sub->add_option("--jobs", opts.jobs, "worker threads")->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "train and evaluate per seed, write run records");
  auto* verify = app.add_subcommand("verify", "check the estimation-error bound on the synthetic system");
  auto* compare = app.add_subcommand("compare", "paired baseline vs L1 comparison table");
  for (auto* sub : {run, verify, compare}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : l1mbrl::kExitConfig;
  }

  if (*run) return l1mbrl::cmd_run(config, opts, std::cout, std::cerr);
  if (*verify) return l1mbrl::cmd_verify(config, opts, std::cout, std::cerr);
  return l1mbrl::cmd_compare(config, opts, std::cout, std::cerr);
}
