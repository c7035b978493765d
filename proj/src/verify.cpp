#include "l1mbrl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace l1mbrl {

namespace {

constexpr std::uint64_t kPreRunSeed = 0x5eedb0u;
constexpr int kSubsteps = 4;

}  // namespace

void SyntheticSpec::validate() const {
  if (n < 1 || m < 1 || m > n) throw ConfigError("synthetic spec: bad dimensions", "/verify");
  if (!F || !W || !model || !u_star) throw ConfigError("synthetic spec: missing field", "/verify");
  if (model->state_dim() != n || model->input_dim() != m)
    throw ConfigError("synthetic spec: model dimensions differ", "/verify");
  if (x0.size() != n) throw ConfigError("synthetic spec: x0 has the wrong size", "/verify/x0");
  if (state_box.dim() != n || input_box.dim() != m)
    throw ConfigError("synthetic spec: sampling boxes have the wrong size", "/verify");
  if (!(eps_l >= 0.0)) throw ConfigError("eps_l must be >= 0", "/verify/eps_l");
  if (!(eps_a > 0.0)) throw ConfigError("eps_a must be > 0", "/verify/eps_a");
  if (ts_grid.empty()) throw ConfigError("ts_grid is empty", "/verify/ts_grid");
  for (double ts : ts_grid)
    if (!(ts > 0.0)) throw ConfigError("ts_grid entries must be > 0", "/verify/ts_grid");
  if (!(t_max > 0.0)) throw ConfigError("t_max must be > 0", "/verify/t_max");
  if (!(lambda < 0.0)) throw ConfigError("lambda must be < 0", "/verify/lambda");
  if (!(omega_factor > 0.0 && omega_factor < 2.0))
    throw ConfigError("omega_factor must lie in (0, 2)", "/verify/omega_factor");
}

SyntheticSpec default_synthetic_spec() {
  constexpr double kappa = 0.05;
  constexpr double pi = std::numbers::pi;
  SyntheticSpec s;
  s.name = "damped_pendulum";
  s.n = 2;
  s.m = 1;
  s.F = [](const Vector& x, const Vector& u) {
    Vector dx(2);
    dx << x[1], -std::sin(x[0]) - 0.2 * x[1] + u[0] + kappa * u[0] * u[0];
    return dx;
  };
  s.W = [](double t, const Vector&, const Vector&) {
    Vector w(2);
    w << 0.05 * std::sin(1.3 * t), 0.1 + 0.3 * std::sin(pi * t);
    return w;
  };
  // Model error: (0.05 cos x2, 0.1 sin x1). Together with W the error norm
  // stays below sqrt(0.1^2 + 0.5^2) < 0.51.
  auto F = s.F;
  s.model = std::make_shared<AnalyticModel>(
      2, 1,
      [F](const Vector& x, const Vector& u) {
        Vector f = F(x, u);
        f[0] += 0.05 * std::cos(x[1]);
        f[1] += 0.1 * std::sin(x[0]);
        return f;
      },
      [](const Vector&, const Vector& u) {
        Matrix j(2, 1);
        j << 0.0, 1.0 + 2.0 * kappa * u[0];
        return j;
      });
  s.u_star = [](double t) {
    Vector u(1);
    u << 0.3 * std::sin(2 * pi * 0.3 * t) + 0.2 * std::sin(2 * pi * 0.71 * t + 0.5) +
             0.1 * std::sin(2 * pi * 1.37 * t + 1.1);
    return u;
  };
  s.x0 = Vector(2);
  s.x0 << 0.3, 0.0;
  s.state_box = symmetric_box(Vector::Constant(2, 4.0));
  s.input_box = symmetric_box(Vector::Constant(1, 2.0));
  s.eps_l = 0.51;
  s.eps_a = 2e-4;
  s.ts_grid = {0.02, 0.01, 0.005};
  s.t_max = 10.0;
  return s;
}

SyntheticSpec constant_disturbance_spec(double d, double ts) {
  SyntheticSpec s;
  s.name = "constant_disturbance";
  s.n = 1;
  s.m = 1;
  s.F = [](const Vector&, const Vector& u) { return Vector(u); };
  s.W = [d](double, const Vector&, const Vector&) { return Vector::Constant(1, d); };
  s.model = std::make_shared<AnalyticModel>(
      1, 1, [](const Vector&, const Vector& u) { return Vector(u); },
      [](const Vector&, const Vector&) { return Matrix::Identity(1, 1); });
  s.u_star = [](double) { return Vector::Zero(1); };
  s.x0 = Vector::Zero(1);
  s.state_box = symmetric_box(Vector::Constant(1, 10.0));
  s.input_box = symmetric_box(Vector::Constant(1, 2.0));
  s.eps_l = std::abs(d);
  s.eps_a = 1e-3;
  s.ts_grid = {ts};
  s.t_max = 50 * ts;
  return s;
}

SyntheticSpec sine_error_spec(double eps_l) {
  SyntheticSpec s;
  s.name = "sine_error";
  s.n = 2;
  s.m = 1;
  s.F = [](const Vector& x, const Vector& u) {
    Vector dx(2);
    dx << x[1], -x[0] + u[0];
    return dx;
  };
  s.W = [](double, const Vector&, const Vector&) { return Vector::Zero(2); };
  auto F = s.F;
  s.model = std::make_shared<AnalyticModel>(
      2, 1,
      [F, eps_l](const Vector& x, const Vector& u) {
        Vector f = F(x, u);
        f[0] += eps_l * std::sin(x[0]);
        return f;
      },
      [](const Vector&, const Vector&) {
        Matrix j(2, 1);
        j << 0.0, 1.0;
        return j;
      });
  s.u_star = [](double t) { return Vector::Constant(1, 0.5 * std::sin(t)); };
  s.x0 = Vector::Zero(2);
  Vector half(2);
  half << std::numbers::pi, 2.0;
  s.state_box = symmetric_box(half);
  s.input_box = symmetric_box(Vector::Constant(1, 1.0));
  s.eps_l = eps_l;
  s.eps_a = 1e-3;
  s.ts_grid = {0.01};
  s.t_max = 1.0;
  return s;
}

RateModel::RateModel(std::shared_ptr<const DynamicsModel> inner, double dt)
    : inner_(std::move(inner)), inv_dt_(1.0 / dt) {
  if (!inner_) throw ContractViolation("RateModel: null model");
  if (!(dt > 0.0)) throw ContractViolation("RateModel: dt must be > 0");
}

Vector RateModel::predict(const Vector& x, const Vector& u) const {
  return inner_->predict(x, u) * inv_dt_;
}

Matrix RateModel::jacobian_u(const Vector& x, const Vector& u) const {
  return inner_->jacobian_u(x, u) * inv_dt_;
}

AssumptionReport check_assumption_bound(const SyntheticSpec& spec, std::size_t samples,
                                        Rng& rng) {
  if (samples < 1) throw ContractViolation("check_assumption_bound: samples must be >= 1");
  AssumptionReport r;
  r.samples = samples;
  r.eps_l = spec.eps_l;
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = rng.uniform(0.0, spec.t_max);
    const Vector x = rng.uniform(spec.state_box);
    const Vector u = rng.uniform(spec.input_box);
    const double err = (spec.F(x, u) + spec.W(t, x, u) - spec.model->predict(x, u)).norm();
    r.sup_estimate = std::max(r.sup_estimate, err);
  }
  r.pass = r.sup_estimate <= spec.eps_l;
  return r;
}

SyntheticSpec with_learned_model(SyntheticSpec spec, std::shared_ptr<const DynamicsModel> rate_model,
                                 std::size_t samples, Rng& rng) {
  spec.model = std::move(rate_model);
  spec.eps_l = 0.0;
  Rng pre(kPreRunSeed);
  spec.eps_l = std::max(check_assumption_bound(spec, samples, rng).sup_estimate,
                        check_assumption_bound(spec, kPreRunSamples, pre).sup_estimate);
  return spec;
}

ErrorTrace run_bound_experiment(const SyntheticSpec& spec, const L1Configd& cfg) {
  spec.validate();
  cfg.validate();
  if (cfg.as_diag.size() != spec.n) throw ConfigError("L1 config dimension differs from spec");

  Rng pre(kPreRunSeed);
  const AssumptionReport check = check_assumption_bound(spec, kPreRunSamples, pre);
  if (!check.pass)
    throw ConfigError("model error " + format_double(check.sup_estimate) + " exceeds eps_l " +
                          format_double(spec.eps_l),
                      "/verify/eps_l");

  const double ts = cfg.ts;
  ErrorTrace tr;
  tr.ts = ts;
  tr.steps = static_cast<int>(std::llround(spec.t_max / ts));
  tr.t.reserve(static_cast<std::size_t>(tr.steps) * kSubsteps);
  tr.e_norm.reserve(tr.t.capacity());

  Vector x = spec.x0;
  L1Stated l1 = L1Stated::zero(spec.n, spec.m);
  std::optional<AffineModel> am;

  auto control = [&](const AffineModel& a, const Vector& u_rl) {
    AffinePiecesd p = a.pieces(x);
    p.g *= ts;
    p.h *= ts;
    return l1_control(u_rl, x, p, l1, cfg);
  };

  const double h = ts / kSubsteps;
  for (int k = 0; k < tr.steps; ++k) {
    const double t0 = k * ts;
    const Vector u_rl = spec.u_star(t0);
    if (!am) am.emplace(affinize(spec.model, u_rl));
    auto out = control(*am, u_rl);
    if (switching_check(*am, x, out.u, spec.eps_a).fire) {
      am.emplace(affinize(spec.model, out.u));
      out = control(*am, u_rl);
      ++tr.switches;
    }
    l1 = std::move(out.state);
    if (l1.degenerate) ++tr.degenerate_steps;
    const Vector u = out.u;
    tr.sigma.push_back(l1.sigma_rate);

    auto flow = [&](double t, const Vector& y) { return Vector(spec.F(y, u) + spec.W(t, y, u)); };
    double interval_max = 0.0;
    Vector y = x;
    for (int j = 0; j < kSubsteps; ++j) {
      const double tau = t0 + j * h;
      const AffinePiecesd p = am->pieces(y);
      const Vector e = spec.F(y, u) + spec.W(tau, y, u) - p.g - p.h * u - l1.sigma_rate;
      const double en = e.norm();
      tr.t.push_back(tau);
      tr.e_norm.push_back(en);
      interval_max = std::max(interval_max, en);
      y = rk4(flow, tau, y, h, 1);
    }
    if (!y.allFinite()) throw std::runtime_error("bound experiment: state diverged");
    if (k == 0)
      tr.first_interval_max = interval_max;
    else
      tr.post_sup = std::max(tr.post_sup, interval_max);
    x = y;
  }
  tr.switch_storm = tr.switches > tr.steps / 2;
  return tr;
}

BoundReport run_bound_grid(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<double> grid = spec.ts_grid;
  std::sort(grid.begin(), grid.end(), std::greater<>());

  BoundReport rep;
  rep.intercept = 2.0 * spec.eps_a;
  for (double ts : grid) {
    L1Configd cfg = L1Configd::make(spec.n, ts, spec.eps_a, spec.omega_factor, spec.lambda);
    rep.traces.push_back(run_bound_experiment(spec, cfg));
    const ErrorTrace& tr = rep.traces.back();
    if (tr.switch_storm)
      rep.warnings.push_back("switch storm at Ts=" + format_double(ts) + ": " +
                             std::to_string(tr.switches) + " switches in " +
                             std::to_string(tr.steps) + " steps");
    if (tr.degenerate_steps > 0)
      rep.warnings.push_back("rank-deficient input matrix on " +
                             std::to_string(tr.degenerate_steps) + " steps at Ts=" +
                             format_double(ts));
  }

  rep.first_interval_ok = true;
  for (const auto& tr : rep.traces)
    rep.first_interval_ok &= tr.first_interval_max <= spec.eps_l + spec.eps_a + 1e-12;

  rep.monotone_ok = true;
  rep.halving_ok = true;
  for (std::size_t i = 1; i < rep.traces.size(); ++i) {
    const ErrorTrace& big = rep.traces[i - 1];
    const ErrorTrace& small = rep.traces[i];
    rep.monotone_ok &= small.post_sup <= big.post_sup;
    if (std::abs(big.ts / small.ts - 2.0) > 1e-9) continue;
    const double d_big = big.post_sup - rep.intercept;
    const double d_small = small.post_sup - rep.intercept;
    if (d_big > 0.0 && d_small > 0.0) {
      const double ratio = d_big / d_small;
      rep.halving_ratios.push_back(ratio);
      rep.halving_ok &= ratio >= 1.5 && ratio <= 2.5;
    } else {
      rep.halving_ratios.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }

  // Least squares for sup = 2 eps_a + C Ts with the intercept held fixed.
  double num = 0.0, den = 0.0;
  for (const auto& tr : rep.traces) {
    num += tr.ts * (tr.post_sup - rep.intercept);
    den += tr.ts * tr.ts;
  }
  rep.slope = num / den;
  rep.fit_residual = 0.0;
  for (const auto& tr : rep.traces) {
    const double fit = rep.intercept + rep.slope * tr.ts;
    if (tr.post_sup > 0.0)
      rep.fit_residual = std::max(rep.fit_residual, std::abs(tr.post_sup - fit) / tr.post_sup);
  }
  rep.fit_ok = rep.traces.size() < 2 || (rep.slope >= 0.0 && rep.fit_residual <= 0.1);

  rep.pass = rep.first_interval_ok && rep.monotone_ok && rep.halving_ok && rep.fit_ok;
  return rep;
}

}  // namespace l1mbrl
