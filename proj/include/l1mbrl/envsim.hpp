#pragma once

#include "l1mbrl/common.hpp"

#include <functional>
#include <map>
#include <string>

namespace l1mbrl {

/// Continuous-time vector field F(x, u).
using VectorField = std::function<Vector(const Vector& x, const Vector& u)>;
/// Input channel B(x) of a control-affine field (n x m).
using InputChannel = std::function<Matrix(const Vector& x)>;
/// Stage reward r(x, u).
using RewardFn = std::function<double(const Vector& x, const Vector& u)>;

/// A ground-truth environment. Immutable once built by make_env.
struct EnvSpec {
  std::string name;
  int n = 0;
  int m = 0;
  double dt = 0.0;
  int horizon = 1;
  Box x0_box;        ///< initial states are drawn uniformly from here
  Box state_bounds;  ///< leaving this box ends the episode
  Box input_bounds;
  VectorField drift;
  InputChannel input_channel;
  RewardFn reward;
  /// Switching tolerance tuned for this environment.
  double default_eps_a = 0.1;
  /// Physical constants after overrides, echoed into run metadata.
  std::map<std::string, double> constants;

  void validate() const;
};

enum class DisturbanceKind {
  kNone,
  kConstantMatched,
  kSinusoidMatched,
  kActionNoise,
  kObsNoise,
};

std::string to_string(DisturbanceKind kind);
DisturbanceKind disturbance_kind_from_string(const std::string& s);

/// Injected disturbance. The matched part (constant or sinusoid, in input
/// units) enters through the true input channel. Uniform action and
/// observation noise are applied whenever their half-widths are positive,
/// so a matched disturbance can be combined with noise.
struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::kNone;
  double amplitude = 0.0;
  double frequency = 0.0;  ///< Hz, sinusoid only
  double sigma_a = 0.0;
  double sigma_o = 0.0;

  void validate() const;
  /// Matched disturbance value at continuous time `time` (input units).
  double matched(double time) const;
  bool has_matched() const {
    return kind == DisturbanceKind::kConstantMatched ||
           kind == DisturbanceKind::kSinusoidMatched;
  }
};

struct Transition {
  Vector x;          ///< observed state at t
  Vector u_applied;  ///< input after clamping, before actuation noise
  Vector u_logged;   ///< input stored for learning
  Vector x_next;     ///< observed successor (observation noise applied)
  double reward = 0.0;
  int t = 0;
};

/// Result of one ground-truth step.
struct StepResult {
  Transition transition;
  Vector x_next_true;  ///< internal state, never observation-noised
  bool failed = false; ///< non-finite state or state left state_bounds
};

/// Catalog: "double_integrator", "pendulum", "cartpole". Overrides replace
/// any of the keys listed in the returned spec's `constants` (plus "dt" and
/// "horizon"); unknown keys raise ConfigError.
EnvSpec make_env(const std::string& name,
                 const std::map<std::string, double>& overrides = {});

/// One fixed-step RK4 integration (4 substeps) of F + W over env.dt.
/// `x` is the true state, `u` the commanded input; the rng supplies the
/// actuation and observation noise (both are always drawn so that streams
/// stay aligned when a noise level is zero).
StepResult step_true(const EnvSpec& env, const DisturbanceSpec& dist,
                     const Vector& x, const Vector& u, int t, Rng& rng);

/// Flow F + W at continuous time `time` for the executed input.
Vector disturbed_flow(const EnvSpec& env, const DisturbanceSpec& dist,
                      double time, const Vector& x, const Vector& u);

/// Classical RK4 over [time, time + h] in `substeps` equal steps.
Vector rk4(const std::function<Vector(double, const Vector&)>& f, double time,
           const Vector& x, double h, int substeps);

}  // namespace l1mbrl
