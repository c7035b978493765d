#include "l1mbrl/envsim.hpp"

#include <cmath>
#include <numbers>

namespace l1mbrl {

void EnvSpec::validate() const {
  if (n < 1 || m < 1) throw ConfigError("env " + name + ": n and m must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("env " + name + ": dt must be > 0");
  if (horizon < 0) throw ConfigError("env " + name + ": horizon must be >= 0");
  if (input_bounds.dim() != m || state_bounds.dim() != n || x0_box.dim() != n)
    throw ConfigError("env " + name + ": bound dimensions do not match n, m");
}

std::string to_string(DisturbanceKind kind) {
  switch (kind) {
    case DisturbanceKind::kNone: return "none";
    case DisturbanceKind::kConstantMatched: return "constant_matched";
    case DisturbanceKind::kSinusoidMatched: return "sinusoid_matched";
    case DisturbanceKind::kActionNoise: return "action_noise";
    case DisturbanceKind::kObsNoise: return "obs_noise";
  }
  return "none";
}

DisturbanceKind disturbance_kind_from_string(const std::string& s) {
  if (s == "none") return DisturbanceKind::kNone;
  if (s == "constant_matched") return DisturbanceKind::kConstantMatched;
  if (s == "sinusoid_matched") return DisturbanceKind::kSinusoidMatched;
  if (s == "action_noise") return DisturbanceKind::kActionNoise;
  if (s == "obs_noise") return DisturbanceKind::kObsNoise;
  throw ConfigError("unknown disturbance kind '" + s + "'");
}

void DisturbanceSpec::validate() const {
  if (!(amplitude >= 0.0)) throw ConfigError("disturbance amplitude must be >= 0");
  if (!(sigma_a >= 0.0) || !(sigma_o >= 0.0))
    throw ConfigError("disturbance noise half-widths must be >= 0");
  if (kind == DisturbanceKind::kSinusoidMatched && !(frequency >= 0.0))
    throw ConfigError("sinusoid frequency must be >= 0");
  if (kind == DisturbanceKind::kActionNoise && !(sigma_a > 0.0))
    throw ConfigError("action_noise requires sigma_a > 0");
  if (kind == DisturbanceKind::kObsNoise && !(sigma_o > 0.0))
    throw ConfigError("obs_noise requires sigma_o > 0");
}

double DisturbanceSpec::matched(double time) const {
  switch (kind) {
    case DisturbanceKind::kConstantMatched: return amplitude;
    case DisturbanceKind::kSinusoidMatched:
      return amplitude * std::sin(2.0 * std::numbers::pi * frequency * time);
    default: return 0.0;
  }
}

Vector rk4(const std::function<Vector(double, const Vector&)>& f, double time,
           const Vector& x, double h, int substeps) {
  Vector y = x;
  const double s = h / substeps;
  for (int i = 0; i < substeps; ++i) {
    const double t0 = time + i * s;
    const Vector k1 = f(t0, y);
    const Vector k2 = f(t0 + 0.5 * s, y + 0.5 * s * k1);
    const Vector k3 = f(t0 + 0.5 * s, y + 0.5 * s * k2);
    const Vector k4 = f(t0 + s, y + s * k3);
    y += (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

Vector disturbed_flow(const EnvSpec& env, const DisturbanceSpec& dist,
                      double time, const Vector& x, const Vector& u) {
  Vector dx = env.drift(x, u);
  if (dist.has_matched())
    dx += env.input_channel(x) * Vector::Constant(env.m, dist.matched(time));
  return dx;
}

StepResult step_true(const EnvSpec& env, const DisturbanceSpec& dist,
                     const Vector& x, const Vector& u, int t, Rng& rng) {
  require_dim(x, env.n, "step_true state");
  require_dim(u, env.m, "step_true input");

  const Vector u_applied = env.input_bounds.clamp(u);
  const Vector action_noise = rng.uniform_symmetric(env.m, 1.0) * dist.sigma_a;
  const Vector obs_noise = rng.uniform_symmetric(env.n, 1.0) * dist.sigma_o;
  const Vector u_exec = u_applied + action_noise;

  const double t0 = t * env.dt;
  auto flow = [&](double time, const Vector& y) {
    return disturbed_flow(env, dist, time, y, u_exec);
  };

  StepResult out;
  out.x_next_true = rk4(flow, t0, x, env.dt, 4);
  out.failed = !out.x_next_true.allFinite() ||
               !env.state_bounds.contains(out.x_next_true);

  Transition& tr = out.transition;
  tr.x = x;
  tr.u_applied = u_applied;
  tr.u_logged = u_applied;
  tr.x_next = out.x_next_true + obs_noise;
  tr.reward = env.reward(x, u_applied);
  tr.t = t;
  return out;
}

namespace {

using Constants = std::map<std::string, double>;

void apply_overrides(const std::string& env, Constants& c,
                     const Constants& overrides) {
  for (const auto& [key, value] : overrides) {
    auto it = c.find(key);
    if (it == c.end())
      throw ConfigError("env " + env + ": unknown override '" + key + "'",
                        "/env/overrides/" + key);
    if (!std::isfinite(value))
      throw ConfigError("env " + env + ": override '" + key + "' is not finite",
                        "/env/overrides/" + key);
    it->second = value;
  }
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

EnvSpec double_integrator(const Constants& overrides) {
  Constants c{{"dt", 0.1},      {"horizon", 100}, {"u_max", 1.0},
              {"x_limit", 10.0}, {"x0_range", 1.0}, {"eps_a", 0.01}};
  apply_overrides("double_integrator", c, overrides);

  EnvSpec env;
  env.name = "double_integrator";
  env.n = 2;
  env.m = 1;
  env.dt = c["dt"];
  env.horizon = static_cast<int>(c["horizon"]);
  env.default_eps_a = c["eps_a"];
  env.x0_box = symmetric_box(Vector::Constant(2, c["x0_range"]));
  env.state_bounds = symmetric_box(Vector::Constant(2, c["x_limit"]));
  env.input_bounds = symmetric_box(Vector::Constant(1, c["u_max"]));
  env.drift = [](const Vector& x, const Vector& u) { return Vector(vec({x[1], u[0]})); };
  env.input_channel = [](const Vector&) {
    Matrix b(2, 1);
    b << 0.0, 1.0;
    return b;
  };
  env.reward = [](const Vector& x, const Vector& u) {
    return -(x[0] * x[0] + 0.1 * x[1] * x[1] + 0.01 * u[0] * u[0]);
  };
  env.constants = c;
  return env;
}

// theta = 0 is the hanging (stable) equilibrium.
EnvSpec pendulum(const Constants& overrides) {
  Constants c{{"dt", 0.05},     {"horizon", 100},    {"mass", 0.5},
              {"length", 0.5},  {"gravity", 9.81},   {"damping", 0.0},
              {"u_max", 1.0},   {"theta_limit", 6.5}, {"omega_limit", 30.0},
              {"x0_range", 0.5}, {"eps_a", 0.01}};
  apply_overrides("pendulum", c, overrides);

  const double ml2 = c["mass"] * c["length"] * c["length"];
  const double g_over_l = c["gravity"] / c["length"];
  const double damping = c["damping"];

  EnvSpec env;
  env.name = "pendulum";
  env.n = 2;
  env.m = 1;
  env.dt = c["dt"];
  env.horizon = static_cast<int>(c["horizon"]);
  env.default_eps_a = c["eps_a"];
  env.x0_box = symmetric_box(Vector::Constant(2, c["x0_range"]));
  env.state_bounds = symmetric_box(vec({c["theta_limit"], c["omega_limit"]}));
  env.input_bounds = symmetric_box(Vector::Constant(1, c["u_max"]));
  env.drift = [=](const Vector& x, const Vector& u) {
    return Vector(vec({x[1], -g_over_l * std::sin(x[0]) - damping / ml2 * x[1] +
                                 u[0] / ml2}));
  };
  env.input_channel = [=](const Vector&) {
    Matrix b(2, 1);
    b << 0.0, 1.0 / ml2;
    return b;
  };
  env.reward = [](const Vector& x, const Vector& u) {
    return -(x[0] * x[0] + 0.1 * x[1] * x[1] + 0.01 * u[0] * u[0]);
  };
  env.constants = c;
  return env;
}

// State (position, velocity, angle, angular rate); angle 0 is upright.
EnvSpec cartpole(const Constants& overrides) {
  Constants c{{"dt", 0.02},          {"horizon", 150},        {"cart_mass", 1.0},
              {"pole_mass", 0.1},    {"pole_half_length", 0.5}, {"gravity", 9.81},
              {"force_max", 10.0},   {"x_limit", 2.4},        {"theta_limit", 0.2095},
              {"velocity_limit", 20.0}, {"x0_range", 0.05},   {"eps_a", 0.1}};
  apply_overrides("cartpole", c, overrides);

  const double mc = c["cart_mass"];
  const double mp = c["pole_mass"];
  const double l = c["pole_half_length"];
  const double g = c["gravity"];
  const double total = mc + mp;
  const double x_lim = c["x_limit"];
  const double th_lim = c["theta_limit"];
  const double f_max = c["force_max"];

  EnvSpec env;
  env.name = "cartpole";
  env.n = 4;
  env.m = 1;
  env.dt = c["dt"];
  env.horizon = static_cast<int>(c["horizon"]);
  env.default_eps_a = c["eps_a"];
  env.x0_box = symmetric_box(Vector::Constant(4, c["x0_range"]));
  const double v_lim = c["velocity_limit"];
  env.state_bounds = symmetric_box(vec({x_lim, v_lim, th_lim, v_lim}));
  env.input_bounds = symmetric_box(Vector::Constant(1, f_max));
  env.drift = [=](const Vector& x, const Vector& u) {
    const double s = std::sin(x[2]);
    const double co = std::cos(x[2]);
    const double temp = (u[0] + mp * l * x[3] * x[3] * s) / total;
    const double theta_acc =
        (g * s - co * temp) / (l * (4.0 / 3.0 - mp * co * co / total));
    const double x_acc = temp - mp * l * theta_acc * co / total;
    return Vector(vec({x[1], x_acc, x[3], theta_acc}));
  };
  env.input_channel = [=](const Vector& x) {
    const double co = std::cos(x[2]);
    const double dtheta = -co / (total * l * (4.0 / 3.0 - mp * co * co / total));
    Matrix b(4, 1);
    b << 0.0, 1.0 / total - mp * l * co * dtheta / total, 0.0, dtheta;
    return b;
  };
  env.reward = [=](const Vector& x, const Vector& u) {
    const double px = x[0] / x_lim;
    const double pt = x[2] / th_lim;
    const double pu = u[0] / f_max;
    return 1.0 - 0.5 * px * px - 0.5 * pt * pt - 0.01 * pu * pu;
  };
  env.constants = c;
  return env;
}

}  // namespace

EnvSpec make_env(const std::string& name, const Constants& overrides) {
  EnvSpec env;
  if (name == "double_integrator") env = double_integrator(overrides);
  else if (name == "pendulum") env = pendulum(overrides);
  else if (name == "cartpole") env = cartpole(overrides);
  else throw ConfigError("unknown environment '" + name + "'", "/env/name");
  env.validate();
  return env;
}

}  // namespace l1mbrl
