#include "l1mbrl/experiments.hpp"

#include "l1mbrl/records.hpp"
#include "l1mbrl/verify.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace l1mbrl {

using nlohmann::json;

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

ScenarioResult run_scenario(const RunConfig& cfg, const Scenario& sc, int jobs) {
  const EnvSpec env = cfg.make_env();
  const L1Configd l1 = cfg.make_l1(env);
  LoopConfig loop = cfg.loop;
  loop.l1_train = sc.l1_train;
  loop.l1_test = sc.l1_test;

  struct Slot {
    std::optional<LoopResult> result;
    std::optional<RunRecord> partial;
    std::string error;
  };
  std::vector<Slot> slots(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    try {
      slots[i].result = train_loop(loop, env, sc.train_dist, sc.eval_dist, cfg.mpc, l1, cfg.model,
                                   cfg.seeds[i]);
    } catch (const LoopAborted& e) {
      slots[i].partial = e.partial();
      slots[i].error = "seed " + std::to_string(cfg.seeds[i]) + ": " + e.what();
    }
  });

  ScenarioResult out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].result) {
      out.record.append(slots[i].result->record);
      out.audit_violations += slots[i].result->audit_violations;
    } else {
      out.record.append(*slots[i].partial);
      if (out.error.empty()) out.error = slots[i].error;
    }
    out.final_returns.push_back(final_window_return(out.record, cfg.seeds[i], cfg.report_window));
  }
  return out;
}

std::filesystem::path output_root(const RunConfig& cfg, const CliOptions& opts) {
  if (!opts.out.empty()) return opts.out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

namespace {

RunConfig load_with_overrides(const std::string& path, const CliOptions& opts) {
  RunConfig cfg = load_config(path);
  if (!opts.seed_override.empty()) cfg.seeds = opts.seed_override;
  if (opts.jobs < 1) throw ConfigError("--jobs must be >= 1");
  return cfg;
}

json env_meta(const EnvSpec& env) {
  return json{{"name", env.name}, {"n", env.n}, {"m", env.m}, {"dt", env.dt},
              {"horizon", env.horizon}, {"constants", env.constants}};
}

// Shared exit-code mapping for the three subcommands.
int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int cmd_run(const std::string& config_path, const CliOptions& opts, std::ostream& log,
            std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_with_overrides(config_path, opts);
    const EnvSpec env = cfg.make_env();
    cfg.make_l1(env);
    const auto root = output_root(cfg, opts) / cfg.name;

    std::vector<std::pair<std::string, Scenario>> runs;
    auto scenario = [&](bool train, bool test) {
      return Scenario{train, test, cfg.disturbance, cfg.disturbance};
    };
    if (cfg.ablation_grid) {
      for (bool train : {false, true})
        for (bool test : {false, true})
          runs.emplace_back(std::string("train-") + (train ? "on" : "off") + "_test-" +
                                (test ? "on" : "off"),
                            scenario(train, test));
    } else {
      runs.emplace_back("", scenario(cfg.loop.l1_train, cfg.loop.l1_test));
    }

    for (const auto& [sub, sc] : runs) {
      const auto dir = sub.empty() ? root : root / sub;
      ScenarioResult res = run_scenario(cfg, sc, opts.jobs);
      json meta{{"config", to_json(cfg)},
                {"scenario", {{"l1_train", sc.l1_train}, {"l1_test", sc.l1_test}}},
                {"env", env_meta(env)},
                {"audit_violations", res.audit_violations},
                {"aborted", !res.error.empty()}};
      write_run_dir(dir, res.record, env.n, env.m, meta);
      log << dir.string() << ":";
      for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
        log << " seed " << cfg.seeds[i] << " final " << format_double(res.final_returns[i]) << ";";
      log << '\n';
      if (!res.error.empty()) {
        err << "aborted: " << res.error << " (partial records written to " << dir.string() << ")\n";
        return static_cast<int>(kExitRuntime);
      }
      if (res.audit_violations > 0) {
        err << "logging-rule audit found " << res.audit_violations << " violations\n";
        return static_cast<int>(kExitRuntime);
      }
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_verify(const std::string& config_path, const CliOptions& opts, std::ostream& log,
               std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_with_overrides(config_path, opts);
    const SyntheticSpec spec = cfg.make_synthetic();
    const BoundReport rep = run_bound_grid(spec);
    const auto dir = output_root(cfg, opts) / cfg.name;
    std::filesystem::create_directories(dir);
    write_json(dir / "bound_report.json", bound_report_json(rep, spec));

    for (const auto& tr : rep.traces)
      log << "Ts=" << format_double(tr.ts) << " first-interval max "
          << format_double(tr.first_interval_max) << " post sup " << format_double(tr.post_sup)
          << " switches " << tr.switches << "/" << tr.steps << '\n';
    log << "fit: 2eps_a=" << format_double(rep.intercept) << " C=" << format_double(rep.slope)
        << " residual=" << format_double(rep.fit_residual) << '\n';
    for (const auto& w : rep.warnings) err << "warning: " << w << '\n';
    log << (rep.pass ? "bound criteria: pass" : "bound criteria: FAIL") << '\n';
    return static_cast<int>(rep.pass ? kExitOk : kExitCriterion);
  });
}

int cmd_compare(const std::string& config_path, const CliOptions& opts, std::ostream& log,
                std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_with_overrides(config_path, opts);
    const EnvSpec env = cfg.make_env();
    cfg.make_l1(env);
    const auto dir = output_root(cfg, opts) / cfg.name;

    std::vector<ComparisonRow> rows;
    std::string error;
    for (const auto& col : cfg.compare.columns) {
      const DisturbanceSpec train = cfg.compare.sim_to_real ? DisturbanceSpec{} : col.disturbance;
      const ScenarioResult base = run_scenario(cfg, {false, false, train, col.disturbance}, opts.jobs);
      const ScenarioResult l1 = run_scenario(cfg, {true, true, train, col.disturbance}, opts.jobs);
      if (error.empty()) error = !base.error.empty() ? base.error : l1.error;

      for (const auto* r : {&base, &l1}) {
        const auto [mean, sd] = mean_std(r->final_returns);
        ComparisonRow row;
        row.kind = "cell";
        row.row = r == &base ? "baseline" : "l1";
        row.column = col.label;
        row.mean = mean;
        row.std = sd;
        row.n = static_cast<int>(r->final_returns.size());
        rows.push_back(row);
      }
      std::vector<double> diff(base.final_returns.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = l1.final_returns[i] - base.final_returns[i];
      const auto [dmean, dsd] = mean_std(diff);
      ComparisonRow st;
      st.kind = "sign_test";
      st.row = "l1_minus_baseline";
      st.column = col.label;
      st.mean = dmean;
      st.std = dsd;
      st.n = static_cast<int>(diff.size());
      st.test = sign_test(l1.final_returns, base.final_returns);
      rows.push_back(st);
      log << col.label << ": baseline " << format_double(rows[rows.size() - 3].mean) << " l1 "
          << format_double(rows[rows.size() - 2].mean) << " (wins " << st.test.wins << ", losses "
          << st.test.losses << ")\n";
    }

    std::filesystem::create_directories(dir);
    {
      std::ofstream out(dir / "comparison.csv", std::ios::binary);
      if (!out) throw std::runtime_error("cannot write comparison.csv");
      write_comparison_csv(out, rows);
    }
    write_json(dir / "meta.json", json{{"config", to_json(cfg)}, {"env", env_meta(env)},
                                       {"aborted", !error.empty()}});
    if (!error.empty()) {
      err << "aborted: " << error << '\n';
      return static_cast<int>(kExitRuntime);
    }
    return static_cast<int>(kExitOk);
  });
}

}  // namespace l1mbrl
