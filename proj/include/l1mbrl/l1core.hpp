#pragma once

// Discrete L1 adaptive augmentation: state predictor, piecewise-constant
// adaptation, matched/unmatched split and first-order low-pass filter.
//
// Units: sigma_rate is a rate (state units per second). It is converted to a
// per-step increment inside the predictor and the decomposition.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

namespace l1mbrl {

/// Discretization of the predictor over one sampling interval.
enum class PredictorDiscretization {
  /// Exact solution of the continuous prediction-error dynamics with the
  /// measured state interpolated linearly between samples.
  kExact,
  /// Forward Euler: x̂ += f^a + (sigma + As x̃) Ts.
  kEuler,
};

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// One-step control-affine model at the current state: Δx ≈ g + h u.
template <typename Scalar>
struct AffinePieces {
  VecX<Scalar> g;
  MatX<Scalar> h;
};

template <typename Scalar>
struct L1Config {
  VecX<Scalar> as_diag;  ///< diagonal of the Hurwitz matrix As
  Scalar ts = 0;         ///< sampling time
  Scalar omega = 0;      ///< filter cutoff (rad/s); K = omega I
  Scalar eps_a = 0;      ///< switching tolerance
  PredictorDiscretization discretization = PredictorDiscretization::kExact;

  /// As = lambda I, omega = omega_factor / ts.
  static L1Config make(Eigen::Index n, Scalar ts, Scalar eps_a,
                       Scalar omega_factor = Scalar(0.35), Scalar lambda = Scalar(-1)) {
    L1Config cfg;
    cfg.as_diag = VecX<Scalar>::Constant(n, lambda);
    cfg.ts = ts;
    cfg.omega = omega_factor / ts;
    cfg.eps_a = eps_a;
    cfg.validate();
    return cfg;
  }

  void validate() const {
    if (as_diag.size() == 0) throw std::invalid_argument("L1Config: empty As");
    if (!((as_diag.array() < Scalar(0)).all()))
      throw std::invalid_argument("L1Config: As diagonal must be strictly negative");
    if (!(ts > Scalar(0))) throw std::invalid_argument("L1Config: Ts must be > 0");
    const Scalar wt = omega * ts;
    if (!(wt > Scalar(0) && wt < Scalar(2)))
      throw std::invalid_argument("L1Config: omega * Ts must lie in (0, 2)");
    if (!(eps_a > Scalar(0))) throw std::invalid_argument("L1Config: eps_a must be > 0");
  }

  /// exp(As Ts), elementwise.
  VecX<Scalar> exp_as() const { return (as_diag.array() * ts).exp().matrix(); }
  /// Phi(Ts) = As^{-1} (exp(As Ts) - I), elementwise.
  VecX<Scalar> phi() const {
    return ((as_diag.array() * ts).exp() - Scalar(1)).matrix().cwiseQuotient(as_diag);
  }
};

template <typename Scalar>
struct L1State {
  VecX<Scalar> xhat;        ///< predictor state at the last measurement
  VecX<Scalar> xtilde;      ///< xhat - x at the last measurement
  VecX<Scalar> sigma_rate;  ///< total uncertainty estimate, rate units
  VecX<Scalar> sigma_m;     ///< matched estimate, input units
  VecX<Scalar> sigma_um;    ///< unmatched coordinates, n - m entries
  VecX<Scalar> q;           ///< filter state, input units
  VecX<Scalar> u_a;         ///< last adaptive input
  /// The next predictor value is affine in the next measurement:
  /// xhat_next = xhat_base + meas_weight ∘ x_next.
  VecX<Scalar> xhat_base;
  VecX<Scalar> meas_weight;
  bool degenerate = false;  ///< last decomposition fell back to a pseudo-inverse

  /// Episode start: every estimate zero, and xhat equal to the first
  /// measurement whatever it is.
  static L1State zero(Eigen::Index n, Eigen::Index m) {
    if (m > n) throw std::invalid_argument("L1State: input dimension exceeds state dimension");
    L1State s;
    s.xhat = VecX<Scalar>::Zero(n);
    s.xtilde = VecX<Scalar>::Zero(n);
    s.sigma_rate = VecX<Scalar>::Zero(n);
    s.sigma_m = VecX<Scalar>::Zero(m);
    s.sigma_um = VecX<Scalar>::Zero(n - m);
    s.q = VecX<Scalar>::Zero(m);
    s.u_a = VecX<Scalar>::Zero(m);
    s.xhat_base = VecX<Scalar>::Zero(n);
    s.meas_weight = VecX<Scalar>::Ones(n);
    return s;
  }

  template <typename Derived>
  VecX<Scalar> resolve(const Eigen::MatrixBase<Derived>& x) const {
    return xhat_base + meas_weight.cwiseProduct(x);
  }
};

/// Piecewise-constant adaptation: sigma = -Phi^{-1} exp(As Ts) x̃.
template <typename Derived>
VecX<typename Derived::Scalar> adapt(const Eigen::MatrixBase<Derived>& xtilde,
                                     const L1Config<typename Derived::Scalar>& cfg) {
  if (xtilde.size() != cfg.as_diag.size())
    throw std::invalid_argument("adapt: dimension mismatch");
  return -(cfg.exp_as().cwiseQuotient(cfg.phi())).cwiseProduct(xtilde);
}

template <typename Scalar>
struct Decomposition {
  VecX<Scalar> sigma_m;
  VecX<Scalar> sigma_um;
  MatX<Scalar> h_perp;  ///< orthonormal basis of range(h)^⊥, n x (n - m)
  bool degenerate = false;
};

/// Smallest singular value of h below which the split is flagged degenerate.
inline constexpr double kRankTolerance = 1e-8;

/// Splits sigma_rate * ts = h sigma_m + h_perp sigma_um. The columns of
/// h_perp are orthonormal and sign-normalized (first nonzero entry
/// positive). A rank-deficient h falls back to the pseudo-inverse.
template <typename DerivedH, typename DerivedS>
Decomposition<typename DerivedH::Scalar> decompose(const Eigen::MatrixBase<DerivedH>& h,
                                                   const Eigen::MatrixBase<DerivedS>& sigma_rate,
                                                   typename DerivedH::Scalar ts) {
  using Scalar = typename DerivedH::Scalar;
  const Eigen::Index n = h.rows();
  const Eigen::Index m = h.cols();
  if (sigma_rate.size() != n || m > n) throw std::invalid_argument("decompose: dimension mismatch");

  const VecX<Scalar> increment = sigma_rate * ts;
  Eigen::JacobiSVD<MatX<Scalar>> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();

  Decomposition<Scalar> out;
  out.degenerate = sv.size() == 0 || sv.minCoeff() < Scalar(kRankTolerance);
  if (out.degenerate) svd.setThreshold(Scalar(kRankTolerance) / std::max(sv.maxCoeff(), Scalar(kRankTolerance)));
  out.sigma_m = svd.solve(increment);

  out.h_perp = svd.matrixU().rightCols(n - m);
  for (Eigen::Index j = 0; j < out.h_perp.cols(); ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(out.h_perp(i, j)) > Scalar(1e-12)) {
        if (out.h_perp(i, j) < Scalar(0)) out.h_perp.col(j) *= Scalar(-1);
        break;
      }
    }
  }
  out.sigma_um = out.h_perp.transpose() * increment;
  return out;
}

/// First-order low-pass filter, one Euler step: q += omega Ts (sigma_m - q);
/// returns (q_next, u_a = -q_next).
template <typename DerivedQ, typename DerivedS>
std::pair<VecX<typename DerivedQ::Scalar>, VecX<typename DerivedQ::Scalar>> filter_step(
    const Eigen::MatrixBase<DerivedQ>& q, const Eigen::MatrixBase<DerivedS>& sigma_m,
    const L1Config<typename DerivedQ::Scalar>& cfg) {
  if (q.size() != sigma_m.size()) throw std::invalid_argument("filter_step: dimension mismatch");
  VecX<typename DerivedQ::Scalar> q_next = q + (cfg.omega * cfg.ts) * (sigma_m - q);
  VecX<typename DerivedQ::Scalar> u_a = -q_next;
  return {std::move(q_next), std::move(u_a)};
}

/// Advances the predictor by one sampling interval using the measurement x,
/// the input u actually applied, and the affine model at x. The xtilde and
/// sigma_rate stored in `state` must already correspond to x.
template <typename Scalar>
L1State<Scalar> predictor_step(L1State<Scalar> state, const VecX<Scalar>& x,
                               const VecX<Scalar>& u, const AffinePieces<Scalar>& model,
                               const L1Config<Scalar>& cfg) {
  if (!x.allFinite() || !u.allFinite() || !state.xhat.allFinite())
    throw std::invalid_argument("predictor_step: non-finite input");
  const VecX<Scalar> increment = model.g + model.h * u;
  if (cfg.discretization == PredictorDiscretization::kEuler) {
    state.xhat_base = state.xhat + increment +
                      (state.sigma_rate + cfg.as_diag.cwiseProduct(state.xtilde)) * cfg.ts;
    state.meas_weight.setZero();
  } else {
    const VecX<Scalar> phi = cfg.phi();
    const VecX<Scalar> phi_over_ts = phi / cfg.ts;
    state.xhat_base = cfg.exp_as().cwiseProduct(state.xtilde) + phi.cwiseProduct(state.sigma_rate) +
                      phi_over_ts.cwiseProduct(x + increment);
    state.meas_weight = VecX<Scalar>::Ones(x.size()) - phi_over_ts;
  }
  return state;
}

/// Folds a fresh measurement into the state: resolves xhat and x̃.
template <typename Scalar>
L1State<Scalar> measure(L1State<Scalar> state, const VecX<Scalar>& x) {
  state.xhat = state.resolve(x);
  state.xtilde = state.xhat - x;
  return state;
}

template <typename Scalar>
struct ControlOutput {
  VecX<Scalar> u;  ///< augmented input (clamped when bounds are given)
  L1State<Scalar> state;
};

/// One call of the L1 controller: prediction error, adaptation, split,
/// filter, u = u_rl + u_a, then the predictor update with the applied u.
template <typename Scalar>
ControlOutput<Scalar> l1_control(const VecX<Scalar>& u_rl, const VecX<Scalar>& x,
                                 const AffinePieces<Scalar>& model, L1State<Scalar> state,
                                 const L1Config<Scalar>& cfg,
                                 const std::optional<std::pair<VecX<Scalar>, VecX<Scalar>>>&
                                     input_bounds = std::nullopt) {
  if (x.size() != cfg.as_diag.size() || u_rl.size() != model.h.cols() ||
      model.h.rows() != x.size() || model.g.size() != x.size())
    throw std::invalid_argument("l1_control: dimension mismatch");

  state = measure(std::move(state), x);
  state.sigma_rate = adapt(state.xtilde, cfg);
  auto split = decompose(model.h, state.sigma_rate, cfg.ts);
  state.sigma_m = std::move(split.sigma_m);
  state.sigma_um = std::move(split.sigma_um);
  state.degenerate = split.degenerate;
  auto [q_next, u_a] = filter_step(state.q, state.sigma_m, cfg);
  state.q = std::move(q_next);
  state.u_a = std::move(u_a);

  VecX<Scalar> u = u_rl + state.u_a;
  if (input_bounds) u = u.cwiseMax(input_bounds->first).cwiseMin(input_bounds->second);
  state = predictor_step(std::move(state), x, u, model, cfg);
  return {std::move(u), std::move(state)};
}

using L1Configd = L1Config<double>;
using L1Stated = L1State<double>;
using AffinePiecesd = AffinePieces<double>;

}  // namespace l1mbrl
