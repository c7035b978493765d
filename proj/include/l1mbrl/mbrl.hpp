#pragma once

#include "l1mbrl/affine.hpp"
#include "l1mbrl/common.hpp"
#include "l1mbrl/dynmodel.hpp"
#include "l1mbrl/envsim.hpp"
#include "l1mbrl/l1core.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace l1mbrl {

/// Random-shooting MPC settings.
struct MpcConfig {
  int horizon = 15;
  int n_candidates = 256;

  void validate() const;
};

/// Scores each candidate sequence under the model, summing
/// reward(x_{k+1}, u_k) along the predicted rollout from x, and returns the
/// first action of the best one. Ties go to the lowest index; non-finite
/// scores never win. candidates[k] is the m x N matrix of step-k actions.
Vector mpc_action_from_candidates(const DynamicsModel& model, const Vector& x,
                                  const std::vector<Matrix>& candidates,
                                  const RewardFn& reward);

/// Samples mpc.n_candidates sequences i.i.d. uniform over `bounds`.
Vector mpc_action(const DynamicsModel& model, const Vector& x, const MpcConfig& mpc,
                  const Box& bounds, const RewardFn& reward, Rng& rng);

enum class Phase { kCollect, kEval };
std::string to_string(Phase p);

/// Labels attached to every trace row of an episode.
struct EpisodeTag {
  std::uint64_t seed = 0;
  int iteration = 0;
  Phase phase = Phase::kEval;
  int episode = 0;
};

struct TraceRow {
  EpisodeTag tag;
  int t = 0;
  Vector x, xhat, xtilde, sigma, sigma_m, sigma_um;
  Vector u_rl, u_a, u;
  double reward = 0.0;
  bool switched = false;
  double residual = 0.0;     ///< residual that triggered the switch (0 otherwise)
  double anchor_norm = 0.0;  ///< norm of the anchor in force after this step's check
};

struct EpisodeSummary {
  EpisodeTag tag;
  int steps = 0;
  double ret = 0.0;
  bool terminated = false;
  int switches = 0;
};

struct IterationLoss {
  std::uint64_t seed = 0;
  int iteration = 0;
  std::size_t dataset_size = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct RunRecord {
  std::vector<TraceRow> trace;
  std::vector<EpisodeSummary> episodes;
  std::vector<SwitchEvent> switches;
  std::vector<IterationLoss> losses;

  void append(const RunRecord& other);
};

struct EpisodeResult {
  TransitionDataset data;
  std::vector<Transition> transitions;
  RunRecord record;
};

/// Streams an episode draws from: policy sampling and environment noise /
/// initial state are independent so that toggling L1 does not shift them.
struct EpisodeStreams {
  Rng policy;
  Rng env;
  static EpisodeStreams make(std::uint64_t seed, int iteration, Phase phase, int episode);
};

/// One episode of the augmented loop: MPC proposes u_rl, the switching law
/// re-anchors the affine model when needed, L1 (optionally) augments the
/// input, the true system is stepped, and (x_t, u_rl, x_{t+1}) is stored.
EpisodeResult run_episode(const EnvSpec& env, const DisturbanceSpec& dist,
                          std::shared_ptr<const DynamicsModel> model, const MpcConfig& mpc,
                          const L1Configd& l1cfg, bool use_l1, EpisodeStreams streams,
                          const EpisodeTag& tag);

/// Checks the logging rule on an episode: every stored input equals the
/// baseline input of its step, and every applied input equals the clamped
/// sum of baseline and adaptive inputs. Returns the number of violations.
std::size_t audit_logging_rule(const EpisodeResult& episode, const EnvSpec& env);

struct LoopConfig {
  int iterations = 5;
  int episodes_per_iteration = 3;
  int eval_episodes = 3;
  bool l1_train = true;
  bool l1_test = true;

  void validate() const;
};

struct LoopResult {
  RunRecord record;
  TransitionDataset data;
  std::shared_ptr<const Ensemble> model;
  std::size_t audit_violations = 0;
};

/// Raised when a loop aborts (training divergence); carries what was
/// recorded up to the failure.
class LoopAborted : public std::runtime_error {
 public:
  LoopAborted(const std::string& what, RunRecord partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const RunRecord& partial() const { return partial_; }

 private:
  RunRecord partial_;
};

/// Outer loop for one seed: evaluate the untrained model (iteration 0), then
/// per iteration collect episodes (L1 per l1_train, disturbance
/// `train_dist`), append to the dataset, retrain, and evaluate (L1 per
/// l1_test, disturbance `eval_dist`).
LoopResult train_loop(const LoopConfig& loop, const EnvSpec& env,
                      const DisturbanceSpec& train_dist, const DisturbanceSpec& eval_dist,
                      const MpcConfig& mpc, const L1Configd& l1cfg, TrainOptions train_opts,
                      std::uint64_t seed);

}  // namespace l1mbrl
