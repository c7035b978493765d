#pragma once

#include "l1mbrl/mbrl.hpp"
#include "l1mbrl/verify.hpp"

#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace l1mbrl {

// Column sets are fixed; vector fields expand to name_0 .. name_{k-1}.
std::vector<std::string> trace_columns(int n, int m);
std::vector<std::string> episode_columns();
std::vector<std::string> learning_curve_columns();
std::vector<std::string> loss_columns();
std::vector<std::string> comparison_columns();

void write_trace_csv(std::ostream& out, const RunRecord& rec, int n, int m);
void write_episodes_csv(std::ostream& out, const RunRecord& rec);
void write_losses_csv(std::ostream& out, const RunRecord& rec);

struct CurvePoint {
  int iteration = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

/// Mean and sample std of evaluation returns per (iteration, seed), ordered
/// by iteration then by first appearance of the seed.
std::vector<CurvePoint> learning_curve(const RunRecord& rec);
void write_learning_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);

/// Mean of the last `window` evaluation returns of one seed, ordered by
/// (iteration, episode).
double final_window_return(const RunRecord& rec, std::uint64_t seed, int window);

/// Sample mean and standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& v);

struct SignTest {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double p_value = 1.0;  ///< two-sided, ties dropped
};
SignTest sign_test(const std::vector<double>& treatment, const std::vector<double>& control);

struct ComparisonRow {
  std::string kind;  ///< "cell" or "sign_test"
  std::string row;
  std::string column;
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
  SignTest test;
};
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);

/// Writes trace.csv, episodes.csv, losses.csv and learning_curve.csv plus
/// meta.json into `dir` (created if needed).
void write_run_dir(const std::filesystem::path& dir, const RunRecord& rec, int n, int m,
                   const nlohmann::json& meta);

nlohmann::json bound_report_json(const BoundReport& report, const SyntheticSpec& spec);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace l1mbrl
