#include <doctest.h>

#include "dtspn/env.hpp"
#include "dtspn/errors.hpp"
#include "dtspn/rng.hpp"
#include "oracles.hpp"

using namespace dtspn;

namespace {

Instance small_instance() {
  Instance inst = generate(3, 1);
  inst.tasks = {{400, 200}, {600, 600}, {100, 700}};
  return inst;
}

ExpertPath expert_for(const Instance& inst, const EnvConfig& cfg = {}) {
  return plan(inst, {}, {}, cfg.step_dist());
}

}  // namespace

TEST_CASE("imitation reward boundary values are exact") {
  CHECK(imitation_reward(3) == 0.0);
  CHECK(imitation_reward(5) == 0.0);
  CHECK(imitation_reward(10) == -0.1);
  CHECK(imitation_reward(60) == -24.1);
  CHECK(imitation_reward(61) == -10.0);
  CHECK(imitation_reward(0) == 0.0);
}

TEST_CASE("imitation reward follows the quadratic inside the band") {
  SplitMix64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double r = rng.uniform(5.0, 60.0);
    CHECK(imitation_reward(r) == doctest::Approx(0.1 - (r - 5) * (r - 5) / 125.0).epsilon(1e-12));
  }
}

TEST_CASE("goal reward cases") {
  CHECK(goal_reward(0, false) == 0.1);
  CHECK(goal_reward(1, false) == 5.1);
  CHECK(goal_reward(2, false) == 10.1);
  CHECK(goal_reward(1, true) == 10.0);
  CHECK(goal_reward(1, false, 3, true) == 15.1);
  CHECK(goal_reward(0, false, 3, true) == 0.1);
}

TEST_CASE("action grid spans the turn rate range symmetrically") {
  EnvConfig cfg;
  CHECK(cfg.omega(0) == doctest::Approx(-0.6 * kPi));
  CHECK(cfg.omega(3) == 0.0);
  CHECK(cfg.omega(6) == doctest::Approx(0.6 * kPi));
  for (int a = 0; a < 7; ++a) CHECK(cfg.omega(a) == doctest::Approx(-cfg.omega(6 - a)));
  CHECK_THROWS_AS(cfg.omega(7), ValidationError);
  CHECK_THROWS_AS(cfg.omega(-1), ValidationError);
  CHECK(cfg.turn_radius == doctest::Approx(cfg.v / cfg.omega_max));
}

TEST_CASE("inconsistent configurations are rejected") {
  EnvConfig cfg;
  cfg.turn_radius = 20;
  CHECK_THROWS_AS(Env{cfg}, ValidationError);
  cfg = {};
  cfg.dt = 0;
  CHECK_THROWS_AS(Env{cfg}, ValidationError);
}

TEST_CASE("propagation matches the analytic arc") {
  SplitMix64 rng(4);
  EnvConfig cfg;
  for (int i = 0; i < 200; ++i) {
    const Pose p(rng.uniform(0, 800), rng.uniform(0, 800), rng.uniform(-kPi, kPi));
    const int a = static_cast<int>(rng.below(7));
    const Pose q = propagate(p, cfg.omega(a), cfg.v, cfg.dt);
    const int turn = a == 3 ? 0 : (a > 3 ? 1 : -1);
    const double rho = a == 3 ? 1.0 : cfg.v / std::abs(cfg.omega(a));
    const auto o = oracle::move({p.x(), p.y(), p.theta()}, turn, cfg.v * cfg.dt, rho);
    CHECK(oracle::reaches({q.x(), q.y(), q.theta()}, o, 1e-9));
    CHECK(p.distance_to(q) <= cfg.v * cfg.dt + 1e-9);
  }
}

TEST_CASE("polyline distance") {
  const std::vector<Pose> wps{{0, 0, 0}, {10, 0, 0}, {10, 10, 0}};
  CHECK(polyline_distance(wps, 5, 3) == doctest::Approx(3));
  CHECK(polyline_distance(wps, 13, 5) == doctest::Approx(3));
  CHECK(polyline_distance(wps, -3, -4) == doctest::Approx(5));
  CHECK(polyline_distance({{1, 1, 0}}, 4, 5) == doctest::Approx(5));
}

TEST_CASE("common encoding layout") {
  const auto inst = small_instance();
  SimState sim;
  sim.pose = Pose(400, 400, kPi / 2);
  sim.sensed = {true, false, false};
  const auto c = encode_common(sim, inst);
  REQUIRE(c.size() == common_dim(3));
  CHECK(c[0] == doctest::Approx(0.0));
  CHECK(c[1] == doctest::Approx(0.0));
  CHECK(c[2] == doctest::Approx(0.5));
  // task 0 is straight behind: body x negative, bearing pi
  const double diag = std::hypot(800.0, 800.0);
  CHECK(c[3] == doctest::Approx(-200.0 / diag));
  CHECK(c[4] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(c[5]) == doctest::Approx(1.0));
  CHECK(c[12] == 1.0);
  CHECK(c[13] == 0.0);
  CHECK(c[14] == 0.0);
}

TEST_CASE("privileged encoding is the next four waypoints in the body frame") {
  EnvConfig cfg;
  ExpertPath e;
  for (int k = 0; k < 10; ++k) e.waypoints.emplace_back(10.0 * k, 0.0, 0.0);
  SimState sim;
  sim.pose = Pose(0, 0, 0);
  sim.progress_idx = 0;
  const auto p = encode_privileged(sim, e, cfg);
  REQUIRE(p.size() == kPrivilegedDim);
  const double scale = 4 * cfg.step_dist();
  for (int k = 0; k < 4; ++k) {
    CHECK(p[3 * k] == doctest::Approx(10.0 * (k + 1) / scale));
    CHECK(p[3 * k + 1] == doctest::Approx(0.0));
    CHECK(p[3 * k + 2] == doctest::Approx(0.0));
  }
  sim.progress_idx = 8;
  const auto q = encode_privileged(sim, e, cfg);
  CHECK(q[0] == doctest::Approx(90.0 / scale));
  CHECK(q[9] == doctest::Approx(90.0 / scale));
}

TEST_CASE("progress only moves forward within the window") {
  std::vector<Pose> wps;
  for (int k = 0; k < 30; ++k) wps.emplace_back(10.0 * k, 0.0, 0.0);
  CHECK(advance_progress(0, {52, 1, 0}, wps, 8) == 5);
  CHECK(advance_progress(5, {0, 0, 0}, wps, 8) == 5);
  CHECK(advance_progress(0, {200, 0, 0}, wps, 8) == 8);
  CHECK(advance_progress(100, {0, 0, 0}, wps, 8) == 29);
}

TEST_CASE("training mode requires an expert") {
  Env env;
  CHECK_THROWS_AS(env.reset(small_instance(), nullptr, EnvMode::Train), ValidationError);
}

TEST_CASE("reset and observation shapes") {
  const auto inst = small_instance();
  const auto e = expert_for(inst);
  Env env;
  const auto obs = env.reset(inst, &e, EnvMode::Train);
  CHECK(obs.common.size() == common_dim(3));
  REQUIRE(obs.privileged.has_value());
  CHECK(obs.privileged->size() == kPrivilegedDim);
  CHECK(env.state().t == 0);
  CHECK_FALSE(env.done());
  CHECK(env.state().pose.theta() == e.waypoints.front().theta());
  const auto bare = env.reset(inst, nullptr, EnvMode::Eval);
  CHECK_FALSE(bare.privileged.has_value());
}

TEST_CASE("straight driving away from the path is cut off in training") {
  auto inst = small_instance();
  const auto e = expert_for(inst);
  Env env;
  env.reset(inst, &e, EnvMode::Train);
  StepResult r;
  int steps = 0;
  while (!env.done()) {
    r = env.step(0);
    ++steps;
  }
  CHECK((r.info.cutoff || r.info.all_sensed || r.info.truncated));
  CHECK(steps <= 300);
  CHECK_THROWS(env.step(3));
}

TEST_CASE("eval episodes are truncated at the step cap") {
  Instance inst = small_instance();
  inst.tasks = {{790, 790}};
  inst.start = Pose(100, 100, 0);
  Env env;
  env.reset(inst, nullptr, EnvMode::Eval);
  int steps = 0;
  StepResult r;
  while (!env.done()) {
    r = env.step(6);
    ++steps;
  }
  CHECK(steps == 300);
  CHECK(r.info.truncated);
  CHECK(r.reward.imitation == 0.0);
  CHECK(r.reward.goal == 0.1);
}

TEST_CASE("sensing inside a step is detected") {
  Instance inst = small_instance();
  inst.start = Pose(100, 400, 0);
  // the task is only within range mid-step
  inst.tasks = {{100 + 30 * 0.6 * kPi * 0.2 / 3, 400 + inst.r_sense - 0.1}, {700, 700}};
  EnvConfig cfg;
  Env env(cfg);
  env.reset(inst, nullptr, EnvMode::Eval);
  CHECK_FALSE(env.state().sensed[0]);
  const auto r = env.step(3);
  CHECK(env.state().sensed[0]);
  CHECK(r.reward.newly_sensed == 1);
  CHECK(r.reward.goal == 5.1);
  CHECK(r.info.newly_sensed_tasks == std::vector<std::size_t>{0});
}

TEST_CASE("finishing pays the completion bonus") {
  Instance inst = small_instance();
  inst.start = Pose(100, 400, 0);
  inst.tasks = {{100 + 30 * 0.6 * kPi * 0.2, 400 + inst.r_sense - 1.0}};
  Env env;
  env.reset(inst, nullptr, EnvMode::Eval);
  const auto r = env.step(3);
  CHECK(r.done);
  CHECK(r.info.all_sensed);
  CHECK(r.reward.goal == 10.0);
}

TEST_CASE("episodes sensed at reset start done") {
  Instance inst = small_instance();
  inst.tasks = {{inst.start.x() + 5, inst.start.y()}};
  Env env;
  env.reset(inst, nullptr, EnvMode::Eval);
  CHECK(env.done());
}

TEST_CASE("imitation reward uses the distance to the expert polyline") {
  const auto inst = small_instance();
  const auto e = expert_for(inst);
  Env env;
  env.reset(inst, &e, EnvMode::Eval);
  const auto r = env.step(2);
  const auto& p = env.state().pose;
  CHECK(r.reward.r == doctest::Approx(polyline_distance(e.waypoints, p.x(), p.y())));
  CHECK(r.reward.imitation == imitation_reward(r.reward.r));
  CHECK(r.reward.total == r.reward.imitation + r.reward.goal);
}

TEST_CASE("episodes are deterministic") {
  const auto inst = small_instance();
  const auto e = expert_for(inst);
  auto roll = [&] {
    Env env;
    env.reset(inst, &e, EnvMode::Eval);
    std::vector<double> rs;
    SplitMix64 rng(3);
    while (!env.done()) rs.push_back(env.step(static_cast<int>(rng.below(7))).reward.total);
    return rs;
  };
  CHECK(roll() == roll());
}
