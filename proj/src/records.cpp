#include "l1mbrl/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <tuple>

namespace l1mbrl {

using nlohmann::json;

namespace {

void expand(std::vector<std::string>& cols, const std::string& name, int k) {
  for (int i = 0; i < k; ++i) cols.push_back(name + "_" + std::to_string(i));
}

void write_header(std::ostream& out, const std::vector<std::string>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void put(std::ostream& out, const Vector& v, Eigen::Index k) {
  for (Eigen::Index i = 0; i < k; ++i)
    out << ',' << format_double(i < v.size() ? v[i] : std::numeric_limits<double>::quiet_NaN());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<const EpisodeSummary*> eval_episodes_of(const RunRecord& rec, std::uint64_t seed) {
  std::vector<const EpisodeSummary*> eps;
  for (const auto& e : rec.episodes)
    if (e.tag.phase == Phase::kEval && e.tag.seed == seed) eps.push_back(&e);
  std::stable_sort(eps.begin(), eps.end(), [](const EpisodeSummary* a, const EpisodeSummary* b) {
    return std::tie(a->tag.iteration, a->tag.episode) < std::tie(b->tag.iteration, b->tag.episode);
  });
  return eps;
}

}  // namespace

std::vector<std::string> trace_columns(int n, int m) {
  std::vector<std::string> c = {"seed", "iteration", "phase", "episode", "t"};
  expand(c, "x", n);
  expand(c, "xhat", n);
  expand(c, "xtilde", n);
  expand(c, "sigma", n);
  expand(c, "sigma_m", m);
  expand(c, "sigma_um", n - m);
  expand(c, "u_rl", m);
  expand(c, "u_a", m);
  expand(c, "u", m);
  for (const char* s : {"reward", "switched", "residual", "anchor_norm"}) c.emplace_back(s);
  return c;
}

std::vector<std::string> episode_columns() {
  return {"seed", "iteration", "phase", "episode", "steps", "return", "terminated", "switch_count"};
}

std::vector<std::string> learning_curve_columns() {
  return {"iteration", "seed", "mean_return", "std_return"};
}

std::vector<std::string> loss_columns() {
  return {"seed", "iteration", "dataset_size", "train_loss", "val_loss"};
}

std::vector<std::string> comparison_columns() {
  return {"kind", "row", "column", "mean", "std", "n", "wins", "losses", "ties", "p_value"};
}

void write_trace_csv(std::ostream& out, const RunRecord& rec, int n, int m) {
  write_header(out, trace_columns(n, m));
  for (const auto& r : rec.trace) {
    out << r.tag.seed << ',' << r.tag.iteration << ',' << to_string(r.tag.phase) << ','
        << r.tag.episode << ',' << r.t;
    put(out, r.x, n);
    put(out, r.xhat, n);
    put(out, r.xtilde, n);
    put(out, r.sigma, n);
    put(out, r.sigma_m, m);
    put(out, r.sigma_um, n - m);
    put(out, r.u_rl, m);
    put(out, r.u_a, m);
    put(out, r.u, m);
    out << ',' << format_double(r.reward) << ',' << (r.switched ? 1 : 0) << ','
        << format_double(r.residual) << ',' << format_double(r.anchor_norm) << '\n';
  }
}

void write_episodes_csv(std::ostream& out, const RunRecord& rec) {
  write_header(out, episode_columns());
  for (const auto& e : rec.episodes)
    out << e.tag.seed << ',' << e.tag.iteration << ',' << to_string(e.tag.phase) << ','
        << e.tag.episode << ',' << e.steps << ',' << format_double(e.ret) << ','
        << (e.terminated ? 1 : 0) << ',' << e.switches << '\n';
}

void write_losses_csv(std::ostream& out, const RunRecord& rec) {
  write_header(out, loss_columns());
  for (const auto& l : rec.losses)
    out << l.seed << ',' << l.iteration << ',' << l.dataset_size << ','
        << format_double(l.train_loss) << ',' << format_double(l.val_loss) << '\n';
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::vector<CurvePoint> learning_curve(const RunRecord& rec) {
  std::vector<std::uint64_t> seeds;
  std::map<std::pair<int, std::size_t>, std::vector<double>> groups;
  for (const auto& e : rec.episodes) {
    if (e.tag.phase != Phase::kEval) continue;
    auto it = std::find(seeds.begin(), seeds.end(), e.tag.seed);
    const auto seed_idx = static_cast<std::size_t>(it - seeds.begin());
    if (it == seeds.end()) seeds.push_back(e.tag.seed);
    groups[{e.tag.iteration, seed_idx}].push_back(e.ret);
  }
  std::vector<CurvePoint> curve;
  for (const auto& [key, returns] : groups) {
    const auto [mean, sd] = mean_std(returns);
    curve.push_back(CurvePoint{key.first, seeds[key.second], mean, sd});
  }
  return curve;
}

void write_learning_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  write_header(out, learning_curve_columns());
  for (const auto& p : curve)
    out << p.iteration << ',' << p.seed << ',' << format_double(p.mean_return) << ','
        << format_double(p.std_return) << '\n';
}

double final_window_return(const RunRecord& rec, std::uint64_t seed, int window) {
  const auto eps = eval_episodes_of(rec, seed);
  if (eps.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t k = std::min(eps.size(), static_cast<std::size_t>(std::max(window, 1)));
  double sum = 0.0;
  for (std::size_t i = eps.size() - k; i < eps.size(); ++i) sum += eps[i]->ret;
  return sum / static_cast<double>(k);
}

SignTest sign_test(const std::vector<double>& treatment, const std::vector<double>& control) {
  if (treatment.size() != control.size())
    throw ContractViolation("sign_test: samples are not paired");
  SignTest st;
  for (std::size_t i = 0; i < treatment.size(); ++i) {
    if (treatment[i] > control[i])
      ++st.wins;
    else if (treatment[i] < control[i])
      ++st.losses;
    else
      ++st.ties;
  }
  const int trials = st.wins + st.losses;
  if (trials == 0) return st;
  const int k = std::min(st.wins, st.losses);
  // P(X <= k) for X ~ Binomial(trials, 1/2), accumulated in log space.
  double tail = 0.0;
  for (int i = 0; i <= k; ++i)
    tail += std::exp(std::lgamma(trials + 1.0) - std::lgamma(i + 1.0) -
                     std::lgamma(trials - i + 1.0) - trials * std::log(2.0));
  st.p_value = std::min(1.0, 2.0 * tail);
  return st;
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  write_header(out, comparison_columns());
  for (const auto& r : rows) {
    out << r.kind << ',' << r.row << ',' << r.column << ',' << format_double(r.mean) << ','
        << format_double(r.std) << ',' << r.n;
    if (r.kind == "sign_test")
      out << ',' << r.test.wins << ',' << r.test.losses << ',' << r.test.ties << ','
          << format_double(r.test.p_value);
    else
      out << ",,,,";
    out << '\n';
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

void write_run_dir(const std::filesystem::path& dir, const RunRecord& rec, int n, int m,
                   const json& meta) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "trace.csv");
    write_trace_csv(out, rec, n, m);
  }
  {
    auto out = open_out(dir / "episodes.csv");
    write_episodes_csv(out, rec);
  }
  {
    auto out = open_out(dir / "losses.csv");
    write_losses_csv(out, rec);
  }
  {
    auto out = open_out(dir / "learning_curve.csv");
    write_learning_curve_csv(out, learning_curve(rec));
  }
  write_json(dir / "meta.json", meta);
}

json bound_report_json(const BoundReport& report, const SyntheticSpec& spec) {
  json per_ts = json::array();
  for (const auto& tr : report.traces)
    per_ts.push_back({{"ts", tr.ts},
                      {"steps", tr.steps},
                      {"first_interval_max", tr.first_interval_max},
                      {"post_first_interval_sup", tr.post_sup},
                      {"switches", tr.switches},
                      {"degenerate_steps", tr.degenerate_steps},
                      {"switch_storm", tr.switch_storm}});
  json ratios = json::array();
  for (double r : report.halving_ratios) ratios.push_back(std::isfinite(r) ? json(r) : json(nullptr));
  return json{
      {"spec", spec.name},
      {"eps_l", spec.eps_l},
      {"eps_a", spec.eps_a},
      {"t_max", spec.t_max},
      {"per_ts", per_ts},
      {"fit", {{"intercept", report.intercept}, {"slope", report.slope}, {"residual", report.fit_residual}}},
      {"halving_ratios", ratios},
      {"criteria",
       {{"first_interval", report.first_interval_ok},
        {"monotone", report.monotone_ok},
        {"halving", report.halving_ok},
        {"fit", report.fit_ok}}},
      {"warnings", report.warnings},
      {"pass", report.pass},
  };
}

}  // namespace l1mbrl
