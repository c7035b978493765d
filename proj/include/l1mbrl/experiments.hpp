#pragma once

#include "l1mbrl/config.hpp"
#include "l1mbrl/mbrl.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace l1mbrl {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitCriterion = 2,
  kExitRuntime = 3,
};

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "L1MBRL_OUTPUT_ROOT";

struct CliOptions {
  std::vector<std::uint64_t> seed_override;
  std::string out;  ///< output root; overrides config and environment
  int jobs = 1;
};

/// Runs fn(0) .. fn(count - 1) on up to `jobs` threads. The first exception
/// thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

struct Scenario {
  bool l1_train = false;
  bool l1_test = false;
  DisturbanceSpec train_dist;
  DisturbanceSpec eval_dist;
};

struct ScenarioResult {
  RunRecord record;                  ///< all seeds, in config seed order
  std::vector<double> final_returns; ///< per seed, final reporting window
  std::size_t audit_violations = 0;
  std::string error;                 ///< non-empty if some seed aborted
};

/// train_loop for every configured seed, seeds dispatched over `jobs`.
ScenarioResult run_scenario(const RunConfig& cfg, const Scenario& sc, int jobs);

std::filesystem::path output_root(const RunConfig& cfg, const CliOptions& opts);

/// Subcommands. Progress goes to `log`, diagnostics to `err`.
int cmd_run(const std::string& config_path, const CliOptions& opts, std::ostream& log,
            std::ostream& err);
int cmd_verify(const std::string& config_path, const CliOptions& opts, std::ostream& log,
               std::ostream& err);
int cmd_compare(const std::string& config_path, const CliOptions& opts, std::ostream& log,
                std::ostream& err);

}  // namespace l1mbrl
