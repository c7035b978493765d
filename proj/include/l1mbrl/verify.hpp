#pragma once

#include "l1mbrl/affine.hpp"
#include "l1mbrl/common.hpp"
#include "l1mbrl/dynmodel.hpp"
#include "l1mbrl/envsim.hpp"
#include "l1mbrl/l1core.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace l1mbrl {

using TimeVaryingField =
    std::function<Vector(double t, const Vector& x, const Vector& u)>;

/// A continuous system with known truth F + W and a model F̂ whose error
/// is bounded by eps_l everywhere. `model` is in rate units (its predict
/// returns F̂(x, u), not an increment).
struct SyntheticSpec {
  std::string name;
  int n = 0;
  int m = 0;
  VectorField F;
  TimeVaryingField W;
  std::shared_ptr<const DynamicsModel> model;
  std::function<Vector(double t)> u_star;  ///< exciting input
  Vector x0;
  Box state_box;  ///< box sampled by check_assumption_bound
  Box input_box;
  double eps_l = 0.0;
  double eps_a = 0.0;
  std::vector<double> ts_grid;
  double t_max = 0.0;
  double lambda = -1.0;
  double omega_factor = 0.35;

  void validate() const;
};

/// Damped pendulum with a small quadratic input term, a state-dependent
/// model error and a time-varying matched/unmatched disturbance.
SyntheticSpec default_synthetic_spec();

/// ẋ = u + d with an exact affine model; eps_l = |d|.
SyntheticSpec constant_disturbance_spec(double d, double ts);

/// Model error with a pure sin(x1) profile along e1 and no disturbance.
SyntheticSpec sine_error_spec(double eps_l);

/// Wraps a discrete increment model as a rate model: predict / dt.
class RateModel final : public DynamicsModel {
 public:
  RateModel(std::shared_ptr<const DynamicsModel> inner, double dt);
  int state_dim() const override { return inner_->state_dim(); }
  int input_dim() const override { return inner_->input_dim(); }
  Vector predict(const Vector& x, const Vector& u) const override;
  Matrix jacobian_u(const Vector& x, const Vector& u) const override;

 private:
  std::shared_ptr<const DynamicsModel> inner_;
  double inv_dt_;
};

struct AssumptionReport {
  std::size_t samples = 0;
  double sup_estimate = 0.0;
  double eps_l = 0.0;
  bool pass = false;
};

/// Monte-Carlo sup of ||F + W - F̂|| over [0, t_max] x state_box x input_box.
AssumptionReport check_assumption_bound(const SyntheticSpec& spec, std::size_t samples,
                                        Rng& rng);

/// Replaces the spec's model with a learned one and sets eps_l to its
/// Monte-Carlo error sup. The bound is then an estimate, not a guarantee.
SyntheticSpec with_learned_model(SyntheticSpec spec, std::shared_ptr<const DynamicsModel> rate_model,
                                 std::size_t samples, Rng& rng);

struct ErrorTrace {
  double ts = 0.0;
  int steps = 0;
  std::vector<double> t;       ///< evaluation times, four per interval
  std::vector<double> e_norm;  ///< ||e|| at those times
  std::vector<Vector> sigma;   ///< sigma_rate in force on each interval
  double first_interval_max = 0.0;
  double post_sup = 0.0;
  int switches = 0;
  int degenerate_steps = 0;
  bool switch_storm = false;
};

/// Number of checked samples before a run.
inline constexpr std::size_t kPreRunSamples = 2000;

/// Simulates the true system under u*(t) plus L1 augmentation at one Ts and
/// records e = F + W - g - h u - sigma (rate units) at the RK4 substep
/// starts of every interval. The switching law is evaluated at the applied
/// input. Raises ConfigError if the model-error bound is violated on the
/// pre-run sample.
ErrorTrace run_bound_experiment(const SyntheticSpec& spec, const L1Configd& cfg);

struct BoundReport {
  std::vector<ErrorTrace> traces;
  double intercept = 0.0;  ///< 2 eps_a
  double slope = 0.0;      ///< fitted C
  double fit_residual = 0.0;
  std::vector<double> halving_ratios;
  bool first_interval_ok = false;
  bool monotone_ok = false;
  bool halving_ok = false;
  bool fit_ok = false;
  bool pass = false;
  std::vector<std::string> warnings;
};

/// Runs the whole Ts grid (sorted descending) and evaluates the bound
/// criteria. Halving checks apply to consecutive grid points whose ratio
/// is 2.
BoundReport run_bound_grid(const SyntheticSpec& spec);

}  // namespace l1mbrl
