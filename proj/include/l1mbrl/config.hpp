#pragma once

#include "l1mbrl/common.hpp"
#include "l1mbrl/dynmodel.hpp"
#include "l1mbrl/envsim.hpp"
#include "l1mbrl/l1core.hpp"
#include "l1mbrl/mbrl.hpp"
#include "l1mbrl/verify.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace l1mbrl {

struct VerifyConfig {
  std::vector<double> ts_grid = {0.02, 0.01, 0.005};
  double t_max = 10.0;
  double eps_a = 2e-4;
  double eps_l = 0.51;
  double lambda = -1.0;
  double omega_factor = 0.35;
};

/// One column of a comparison table. In sim-to-real mode the ensemble is
/// trained without disturbance and `disturbance` applies only at evaluation.
struct CompareColumn {
  std::string label;
  DisturbanceSpec disturbance;
};

struct CompareConfig {
  bool sim_to_real = false;
  std::vector<CompareColumn> columns;

  /// noise-free, sigma_a = 0.1, sigma_o = 0.1.
  static std::vector<CompareColumn> default_columns();
};

/// A fully resolved experiment configuration.
struct RunConfig {
  std::string name = "run";
  std::string env_name = "double_integrator";
  std::map<std::string, double> env_overrides;
  DisturbanceSpec disturbance;
  TrainOptions model;
  MpcConfig mpc;
  std::vector<double> as_diag;  ///< resolved to the env state dimension
  double omega_factor = 0.35;
  double eps_a = 0.0;  ///< resolved to the env default when absent
  LoopConfig loop;
  bool ablation_grid = false;
  int report_window = 5;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir;  ///< empty: use the environment default
  VerifyConfig verify;
  CompareConfig compare;

  EnvSpec make_env() const;
  L1Configd make_l1(const EnvSpec& env) const;
  SyntheticSpec make_synthetic() const;
};

nlohmann::json to_json(const RunConfig& cfg);
bool operator==(const RunConfig& a, const RunConfig& b);

/// Parses and resolves a config document. Unknown keys and bad values raise
/// ConfigError whose message is prefixed with "<source>:<line>:" when the
/// offending key can be located in `text`.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

}  // namespace l1mbrl
