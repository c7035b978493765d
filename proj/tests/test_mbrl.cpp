#include "l1mbrl/mbrl.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace l1mbrl;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }

std::shared_ptr<AnalyticModel> scalar_integrator() {
  return std::make_shared<AnalyticModel>(
      1, 1, [](const Vector&, const Vector& u) { return u; },
      [](const Vector&, const Vector&) { return Matrix::Identity(1, 1); });
}

// Exact one-step increment of the double integrator under a held input.
std::shared_ptr<AnalyticModel> exact_double_integrator(double dt) {
  Matrix A(2, 2), B(2, 1);
  A << 0.0, dt, 0.0, 0.0;
  B << 0.5 * dt * dt, dt;
  return make_linear_model(A, B);
}

MpcConfig small_mpc() {
  MpcConfig mpc;
  mpc.horizon = 6;
  mpc.n_candidates = 32;
  return mpc;
}

TrainOptions small_training() {
  TrainOptions o;
  o.members = 2;
  o.hidden = {24, 24};
  o.max_epochs = 40;
  o.batch_size = 32;
  return o;
}

}  // namespace

TEST_SUITE("mbrl") {
  TEST_CASE("mpc picks the best of explicit candidates") {
    const RewardFn reward = [](const Vector& x, const Vector&) { return -x.squaredNorm(); };
    const std::vector<Matrix> cands{(Matrix(1, 3) << -1.2, -1.0, 0.0).finished()};
    CHECK(mpc_action_from_candidates(*scalar_integrator(), v1(1.0), cands, reward)[0] == -1.0);

    const std::vector<Matrix> one{Matrix::Constant(1, 1, 0.42)};
    CHECK(mpc_action_from_candidates(*scalar_integrator(), v1(1.0), one, reward)[0] == 0.42);

    const RewardFn flat = [](const Vector&, const Vector&) { return 0.0; };
    const std::vector<Matrix> many{(Matrix(1, 3) << 0.3, -0.9, 0.1).finished(),
                                   (Matrix(1, 3) << 0.0, 0.0, 0.0).finished()};
    CHECK(mpc_action_from_candidates(*scalar_integrator(), v1(1.0), many, flat)[0] == 0.3);
  }

  TEST_CASE("non-finite scores never win") {
    const RewardFn reward = [](const Vector& x, const Vector&) {
      return x[0] > 5.0 ? std::nan("") : -x.squaredNorm();
    };
    const std::vector<Matrix> cands{(Matrix(1, 2) << 10.0, 3.0).finished()};
    CHECK(mpc_action_from_candidates(*scalar_integrator(), v1(0.0), cands, reward)[0] == 3.0);
  }

  TEST_CASE("mpc sampling is deterministic and within bounds") {
    const EnvSpec env = make_env("double_integrator");
    auto model = exact_double_integrator(env.dt);
    Rng a(5), b(5);
    const Vector x = (Vector(2) << 0.5, -0.1).finished();
    for (int i = 0; i < 10; ++i) {
      const Vector ua = mpc_action(*model, x, small_mpc(), env.input_bounds, env.reward, a);
      CHECK(ua == mpc_action(*model, x, small_mpc(), env.input_bounds, env.reward, b));
      CHECK(env.input_bounds.contains(ua));
    }
  }

  TEST_CASE("zero horizon episode") {
    const EnvSpec env = make_env("double_integrator", {{"horizon", 0}});
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    const auto ep = run_episode(env, {}, exact_double_integrator(env.dt), small_mpc(), l1, true,
                                EpisodeStreams::make(0, 0, Phase::kEval, 0), {});
    CHECK(ep.data.empty());
    REQUIRE(ep.record.episodes.size() == 1);
    CHECK(ep.record.episodes[0].ret == 0.0);
    CHECK(ep.record.episodes[0].steps == 0);
  }

  TEST_CASE("without L1 the logged input is the applied input") {
    const EnvSpec env = make_env("pendulum");
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    DisturbanceSpec dist;
    dist.kind = DisturbanceKind::kConstantMatched;
    dist.amplitude = 0.3;
    auto model = std::make_shared<Ensemble>(2, 1, small_training());
    const auto ep = run_episode(env, dist, model, small_mpc(), l1, false,
                                EpisodeStreams::make(1, 0, Phase::kEval, 0), {});
    REQUIRE(!ep.transitions.empty());
    for (const auto& tr : ep.transitions) CHECK(tr.u_logged == tr.u_applied);
    for (const auto& row : ep.record.trace) CHECK(row.u_a.isZero());
    CHECK(audit_logging_rule(ep, env) == 0);
  }

  TEST_CASE("L1 is transparent on a perfect model") {
    const EnvSpec env = make_env("double_integrator");
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    auto model = exact_double_integrator(env.dt);
    const auto off = run_episode(env, {}, model, small_mpc(), l1, false,
                                 EpisodeStreams::make(3, 0, Phase::kEval, 0), {});
    const auto on = run_episode(env, {}, model, small_mpc(), l1, true,
                                EpisodeStreams::make(3, 0, Phase::kEval, 0), {});
    REQUIRE(off.data.size() == on.data.size());
    REQUIRE(on.data.size() == static_cast<std::size_t>(env.horizon));
    for (std::size_t t = 0; t < on.data.size(); ++t) {
      const auto& a = off.data.row(t);
      const auto& b = on.data.row(t);
      CHECK((a.x - b.x).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((a.u - b.u).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((a.x_next - b.x_next).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((on.transitions[t].u_applied - on.transitions[t].u_logged).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }

  TEST_CASE("L1 episodes store the baseline input") {
    const EnvSpec env = make_env("pendulum");
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    DisturbanceSpec dist;
    dist.kind = DisturbanceKind::kConstantMatched;
    dist.amplitude = 0.3;
    auto model = std::make_shared<Ensemble>(2, 1, small_training());
    const auto ep = run_episode(env, dist, model, small_mpc(), l1, true,
                                EpisodeStreams::make(2, 0, Phase::kEval, 0), {});
    CHECK(audit_logging_rule(ep, env) == 0);
    bool augmented = false;
    for (std::size_t t = 0; t < ep.transitions.size(); ++t) {
      const auto& row = ep.record.trace[t];
      CHECK(ep.transitions[t].u_logged == row.u_rl);
      CHECK(ep.data.row(t).u == row.u_rl);
      augmented |= !row.u_a.isZero();
    }
    CHECK(augmented);

    EpisodeResult tampered = ep;
    tampered.transitions[3].u_logged = tampered.transitions[3].u_applied;
    CHECK(audit_logging_rule(tampered, env) >= 1);
  }

  TEST_CASE("anchors stay valid between switches") {
    const EnvSpec env = make_env("pendulum");
    const L1Configd l1 = L1Configd::make(2, env.dt, 0.002);
    TrainOptions o = small_training();
    o.seed = 17;
    auto model = std::make_shared<Ensemble>(2, 1, o);
    const auto ep = run_episode(env, {}, model, small_mpc(), l1, true,
                                EpisodeStreams::make(4, 0, Phase::kEval, 0), {});
    const auto& sw = ep.record.switches;
    REQUIRE(!sw.empty());
    CHECK(sw.front().t == 0);
    CHECK(sw.front().old_anchor.size() == 0);
    CHECK(static_cast<int>(sw.size()) == ep.record.episodes[0].switches);
    for (std::size_t k = 1; k < sw.size(); ++k) {
      CHECK(sw[k].residual >= l1.eps_a);
      CHECK(sw[k].old_anchor == sw[k - 1].new_anchor);
    }
    std::size_t next = 0;
    Vector anchor;
    for (const auto& row : ep.record.trace) {
      if (next < sw.size() && sw[next].t == row.t) {
        anchor = sw[next].new_anchor;
        ++next;
        continue;
      }
      const AffineModel am = affinize(model, anchor);
      CHECK(switching_check(am, row.x, row.u_rl, l1.eps_a).residual < l1.eps_a);
    }
    CHECK(next == sw.size());
  }

  TEST_CASE("zero iterations only evaluate the untrained model") {
    const EnvSpec env = make_env("double_integrator", {{"horizon", 20}});
    LoopConfig loop;
    loop.iterations = 0;
    loop.eval_episodes = 2;
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    const LoopResult r = train_loop(loop, env, {}, {}, small_mpc(), l1, small_training(), 0);
    CHECK(r.data.empty());
    CHECK(r.record.losses.empty());
    REQUIRE(r.record.episodes.size() == 2);
    for (const auto& e : r.record.episodes) {
      CHECK(e.tag.iteration == 0);
      CHECK(e.tag.phase == Phase::kEval);
    }
    CHECK(r.model->version() == 0);
  }

  TEST_CASE("loop is deterministic and returns add up") {
    const EnvSpec env = make_env("pendulum", {{"horizon", 30}});
    LoopConfig loop;
    loop.iterations = 2;
    loop.episodes_per_iteration = 2;
    loop.eval_episodes = 1;
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    DisturbanceSpec dist;
    dist.kind = DisturbanceKind::kActionNoise;
    dist.sigma_a = 0.1;
    const LoopResult a = train_loop(loop, env, dist, dist, small_mpc(), l1, small_training(), 9);
    const LoopResult b = train_loop(loop, env, dist, dist, small_mpc(), l1, small_training(), 9);
    REQUIRE(a.record.trace.size() == b.record.trace.size());
    for (std::size_t i = 0; i < a.record.trace.size(); ++i) {
      CHECK(a.record.trace[i].x == b.record.trace[i].x);
      CHECK(a.record.trace[i].u == b.record.trace[i].u);
    }
    REQUIRE(a.record.losses.size() == 2);
    CHECK(a.record.losses[1].val_loss == b.record.losses[1].val_loss);
    CHECK(a.audit_violations == 0);

    std::map<std::tuple<int, int, int>, double> sums;
    for (const auto& row : a.record.trace)
      sums[{row.tag.iteration, static_cast<int>(row.tag.phase), row.tag.episode}] += row.reward;
    std::size_t switch_total = 0;
    for (const auto& e : a.record.episodes) {
      CHECK(e.ret == doctest::Approx(sums[{e.tag.iteration, static_cast<int>(e.tag.phase), e.tag.episode}]));
      switch_total += static_cast<std::size_t>(e.switches);
    }
    CHECK(switch_total == a.record.switches.size());
  }

  TEST_CASE("failing episodes stop early") {
    const EnvSpec env = make_env("double_integrator", {{"x_limit", 0.3}, {"x0_range", 0.25}});
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    // The model believes the input has the opposite sign, so MPC drives
    // the state out of the box.
    Matrix A(2, 2), B(2, 1);
    A << 0.0, env.dt, 0.0, 0.0;
    B << -0.5 * env.dt * env.dt, -env.dt;
    const auto ep = run_episode(env, {}, make_linear_model(A, B), small_mpc(), l1, false,
                                EpisodeStreams::make(0, 0, Phase::kEval, 0), {});
    const auto& sum = ep.record.episodes.at(0);
    CHECK(sum.terminated);
    CHECK(sum.steps < env.horizon);
    CHECK(ep.record.trace.size() == static_cast<std::size_t>(sum.steps));
    CHECK(ep.data.size() == static_cast<std::size_t>(sum.steps));
  }

  TEST_CASE("ablation flags only affect their own phase") {
    const EnvSpec env = make_env("pendulum", {{"horizon", 25}});
    LoopConfig loop;
    loop.iterations = 1;
    loop.episodes_per_iteration = 2;
    loop.eval_episodes = 1;
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    DisturbanceSpec dist;
    dist.kind = DisturbanceKind::kConstantMatched;
    dist.amplitude = 0.3;
    auto collect = [&](bool train, bool test) {
      LoopConfig c = loop;
      c.l1_train = train;
      c.l1_test = test;
      const LoopResult r = train_loop(c, env, dist, dist, small_mpc(), l1, small_training(), 21);
      std::vector<Vector> xs;
      for (const auto& row : r.record.trace)
        if (row.tag.phase == Phase::kCollect) xs.push_back(row.x);
      return xs;
    };
    const auto off_off = collect(false, false);
    const auto off_on = collect(false, true);
    CHECK(off_off == off_on);
    CHECK(off_off != collect(true, false));
  }

  TEST_CASE("learning improves the double integrator") {
    const EnvSpec env = make_env("double_integrator", {{"horizon", 40}});
    LoopConfig loop;
    loop.iterations = 5;
    loop.episodes_per_iteration = 2;
    loop.eval_episodes = 2;
    loop.l1_train = loop.l1_test = false;
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const LoopResult r = train_loop(loop, env, {}, {}, small_mpc(), l1, small_training(), seed);
      double first = 0.0, last = 0.0;
      for (const auto& e : r.record.episodes) {
        if (e.tag.phase != Phase::kEval) continue;
        if (e.tag.iteration == 0) first += e.ret;
        if (e.tag.iteration == loop.iterations) last += e.ret;
      }
      CHECK(last > first);
    }
  }

  TEST_CASE("invalid loop settings") {
    const EnvSpec env = make_env("pendulum");
    const L1Configd l1 = L1Configd::make(2, env.dt, env.default_eps_a);
    LoopConfig loop;
    loop.iterations = -1;
    CHECK_THROWS_AS(train_loop(loop, env, {}, {}, small_mpc(), l1, small_training(), 0), ConfigError);
    MpcConfig mpc;
    mpc.horizon = 0;
    CHECK_THROWS_AS(train_loop(LoopConfig{}, env, {}, {}, mpc, l1, small_training(), 0), ConfigError);
  }
}
