#include "l1mbrl/mbrl.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace l1mbrl {

void MpcConfig::validate() const {
  if (horizon < 1) throw ConfigError("mpc horizon must be >= 1", "/mpc/horizon");
  if (n_candidates < 1) throw ConfigError("mpc n_candidates must be >= 1", "/mpc/n_candidates");
}

void LoopConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0", "/loop/iterations");
  if (episodes_per_iteration < 0)
    throw ConfigError("episodes_per_iteration must be >= 0", "/loop/episodes_per_iteration");
  if (eval_episodes < 0) throw ConfigError("eval_episodes must be >= 0", "/loop/eval_episodes");
}

std::string to_string(Phase p) { return p == Phase::kCollect ? "collect" : "eval"; }

void RunRecord::append(const RunRecord& other) {
  trace.insert(trace.end(), other.trace.begin(), other.trace.end());
  episodes.insert(episodes.end(), other.episodes.begin(), other.episodes.end());
  switches.insert(switches.end(), other.switches.begin(), other.switches.end());
  losses.insert(losses.end(), other.losses.begin(), other.losses.end());
}

Vector mpc_action_from_candidates(const DynamicsModel& model, const Vector& x,
                                  const std::vector<Matrix>& candidates,
                                  const RewardFn& reward) {
  if (candidates.empty()) throw ContractViolation("mpc: empty candidate horizon");
  const Eigen::Index count = candidates.front().cols();
  if (count < 1) throw ContractViolation("mpc: no candidates");
  require_dim(x, model.state_dim(), "mpc state");

  Matrix states = x.replicate(1, count);
  Vector score = Vector::Zero(count);
  for (const Matrix& actions : candidates) {
    if (actions.rows() != model.input_dim() || actions.cols() != count)
      throw ContractViolation("mpc: candidate matrix has the wrong shape");
    states += model.predict_batch(states, actions);
    for (Eigen::Index j = 0; j < count; ++j)
      score[j] += reward(states.col(j), actions.col(j));
  }

  Eigen::Index best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < count; ++j) {
    if (std::isfinite(score[j]) && score[j] > best_score) {
      best_score = score[j];
      best = j;
    }
  }
  return candidates.front().col(best);
}

Vector mpc_action(const DynamicsModel& model, const Vector& x, const MpcConfig& mpc,
                  const Box& bounds, const RewardFn& reward, Rng& rng) {
  mpc.validate();
  require_dim(bounds.lower, model.input_dim(), "mpc input bounds");
  std::vector<Matrix> candidates(static_cast<std::size_t>(mpc.horizon));
  // Candidate-major draw order: sequence j is fully drawn before j + 1.
  for (auto& c : candidates) c.resize(model.input_dim(), mpc.n_candidates);
  for (int j = 0; j < mpc.n_candidates; ++j)
    for (auto& c : candidates) c.col(j) = rng.uniform(bounds);
  return mpc_action_from_candidates(model, x, candidates, reward);
}

EpisodeStreams EpisodeStreams::make(std::uint64_t seed, int iteration, Phase phase,
                                    int episode) {
  const auto it = static_cast<std::uint64_t>(iteration);
  const auto ph = static_cast<std::uint64_t>(phase == Phase::kCollect ? 1 : 2);
  const auto ep = static_cast<std::uint64_t>(episode);
  return EpisodeStreams{Rng::stream(seed, {it, ph, ep, 11}), Rng::stream(seed, {it, ph, ep, 23})};
}

namespace {

Vector nan_vector(Eigen::Index n) {
  return Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
}

}  // namespace

EpisodeResult run_episode(const EnvSpec& env, const DisturbanceSpec& dist,
                          std::shared_ptr<const DynamicsModel> model, const MpcConfig& mpc,
                          const L1Configd& l1cfg, bool use_l1, EpisodeStreams streams,
                          const EpisodeTag& tag) {
  if (!model) throw ContractViolation("run_episode: null model");
  if (model->state_dim() != env.n || model->input_dim() != env.m)
    throw ContractViolation("run_episode: model dimensions do not match the environment");

  EpisodeResult out;
  out.data = TransitionDataset(env.n, env.m);

  Vector x_true = streams.env.uniform(env.x0_box);
  Vector x_obs = x_true;
  std::optional<AffineModel> am;
  L1Stated l1 = L1Stated::zero(env.n, env.m);
  const auto bounds = std::make_optional(std::make_pair(env.input_bounds.lower, env.input_bounds.upper));

  EpisodeSummary summary;
  summary.tag = tag;

  for (int t = 0; t < env.horizon; ++t) {
    const Vector u_rl = mpc_action(*model, x_obs, mpc, env.input_bounds, env.reward, streams.policy);

    TraceRow row;
    row.tag = tag;
    row.t = t;
    row.x = x_obs;
    row.u_rl = u_rl;

    if (!am) {
      am.emplace(affinize(model, u_rl));
      row.switched = true;
      out.record.switches.push_back(SwitchEvent{t, Vector(), u_rl, 0.0});
    } else {
      const SwitchDecision d = switching_check(*am, x_obs, u_rl, l1cfg.eps_a);
      if (d.fire) {
        out.record.switches.push_back(SwitchEvent{t, am->anchor(), u_rl, d.residual});
        am.emplace(affinize(model, u_rl));
        row.switched = true;
        row.residual = d.residual;
      }
    }
    row.anchor_norm = am->anchor().norm();

    Vector u;
    if (use_l1) {
      auto ctrl = l1_control(u_rl, x_obs, am->pieces(x_obs), std::move(l1), l1cfg, bounds);
      u = std::move(ctrl.u);
      l1 = std::move(ctrl.state);
      row.xhat = l1.xhat;
      row.xtilde = l1.xtilde;
      row.sigma = l1.sigma_rate;
      row.sigma_m = l1.sigma_m;
      row.sigma_um = l1.sigma_um;
      row.u_a = l1.u_a;
    } else {
      u = env.input_bounds.clamp(u_rl);
      row.xhat = nan_vector(env.n);
      row.xtilde = nan_vector(env.n);
      row.sigma = nan_vector(env.n);
      row.sigma_m = nan_vector(env.m);
      row.sigma_um = nan_vector(env.n - env.m);
      row.u_a = Vector::Zero(env.m);
    }

    StepResult step = step_true(env, dist, x_true, u, t, streams.env);
    Transition tr = std::move(step.transition);
    tr.x = x_obs;
    tr.u_logged = u_rl;

    row.u = tr.u_applied;
    row.reward = tr.reward;
    summary.ret += tr.reward;
    summary.steps = t + 1;
    if (row.switched) ++summary.switches;

    out.data.add(tr.x, tr.u_logged, tr.x_next);
    out.record.trace.push_back(std::move(row));
    x_true = step.x_next_true;
    x_obs = tr.x_next;
    out.transitions.push_back(std::move(tr));

    if (step.failed) {
      summary.terminated = true;
      break;
    }
  }
  out.record.episodes.push_back(summary);
  return out;
}

std::size_t audit_logging_rule(const EpisodeResult& episode, const EnvSpec& env) {
  std::size_t violations = 0;
  const auto& trace = episode.record.trace;
  if (trace.size() != episode.transitions.size()) ++violations;
  const std::size_t steps = std::min(trace.size(), episode.transitions.size());
  std::size_t data_row = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    const Transition& tr = episode.transitions[i];
    const TraceRow& row = trace[i];
    if (tr.u_logged != row.u_rl) ++violations;
    if (tr.u_applied != env.input_bounds.clamp(row.u_rl + row.u_a)) ++violations;
    if (tr.x.allFinite() && tr.u_logged.allFinite() && tr.x_next.allFinite()) {
      if (data_row >= episode.data.size() || episode.data.row(data_row).u != row.u_rl)
        ++violations;
      ++data_row;
    }
  }
  if (data_row != episode.data.size()) ++violations;
  return violations;
}

LoopResult train_loop(const LoopConfig& loop, const EnvSpec& env,
                      const DisturbanceSpec& train_dist, const DisturbanceSpec& eval_dist,
                      const MpcConfig& mpc, const L1Configd& l1cfg, TrainOptions train_opts,
                      std::uint64_t seed) {
  loop.validate();
  mpc.validate();
  train_dist.validate();
  eval_dist.validate();
  l1cfg.validate();

  train_opts.seed = Rng::stream(seed, {0x70de1}).next_u64();
  auto ensemble = std::make_shared<Ensemble>(env.n, env.m, train_opts);
  std::shared_ptr<const Ensemble> model = ensemble;

  LoopResult result;
  result.data = TransitionDataset(env.n, env.m);

  auto evaluate = [&](int iteration) {
    for (int e = 0; e < loop.eval_episodes; ++e) {
      EpisodeTag tag{seed, iteration, Phase::kEval, e};
      auto ep = run_episode(env, eval_dist, model, mpc, l1cfg, loop.l1_test,
                            EpisodeStreams::make(seed, iteration, Phase::kEval, e), tag);
      result.audit_violations += audit_logging_rule(ep, env);
      result.record.append(ep.record);
    }
  };

  evaluate(0);
  for (int it = 1; it <= loop.iterations; ++it) {
    for (int e = 0; e < loop.episodes_per_iteration; ++e) {
      EpisodeTag tag{seed, it, Phase::kCollect, e};
      auto ep = run_episode(env, train_dist, model, mpc, l1cfg, loop.l1_train,
                            EpisodeStreams::make(seed, it, Phase::kCollect, e), tag);
      result.audit_violations += audit_logging_rule(ep, env);
      result.data.append(ep.data);
      result.record.append(ep.record);
    }

    IterationLoss loss{seed, it, result.data.size(), 0.0, 0.0};
    if (result.data.size() >= static_cast<std::size_t>(train_opts.batch_size)) {
      auto next = std::make_shared<Ensemble>(*model);
      try {
        const TrainReport rep = train(*next, result.data, train_opts);
        loss.train_loss = rep.mean_train_loss();
        loss.val_loss = rep.mean_val_loss();
      } catch (const TrainingDivergence& e) {
        throw LoopAborted(e.what(), result.record);
      }
      model = next;
    } else {
      loss.train_loss = loss.val_loss = std::numeric_limits<double>::quiet_NaN();
    }
    result.record.losses.push_back(loss);
    evaluate(it);
  }
  result.model = model;
  return result;
}

}  // namespace l1mbrl
