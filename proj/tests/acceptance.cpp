#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "dtspn/errors.hpp"
#include "dtspn/evaluate.hpp"
#include "dtspn/learn.hpp"
#include "oracles.hpp"

using namespace dtspn;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& msg) { std::fprintf(stderr, "  .. %s\n", msg.c_str()); }

Outcome dubins_optimality() {
  SplitMix64 rng(20240101);
  const double rho = 30.0;
  std::vector<std::pair<Pose, Pose>> pairs;
  for (int i = 0; i < 1000; ++i) {
    Pose a(rng.uniform(0, 800), rng.uniform(0, 800), rng.uniform(-kPi, kPi));
    Pose b(rng.uniform(0, 800), rng.uniform(0, 800), rng.uniform(-kPi, kPi));
    pairs.emplace_back(a, b);
  }
  const auto t0 = Clock::now();
  std::vector<DubinsPath> paths;
  paths.reserve(pairs.size());
  for (const auto& [a, b] : pairs) paths.push_back(shortest_path(a, b, rho));
  const double secs = since(t0);

  int bad_len = 0, bad_euclid = 0;
  double worst_end = 0.0, worst_gap = -1e9;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [a, b] = pairs[i];
    const double o = oracle::dubins_length(a, b, rho);
    const double l = paths[i].length();
    worst_gap = std::max(worst_gap, l - o);
    if (l > o + 1e-3) ++bad_len;
    if (l < std::hypot(a.x() - b.x(), a.y() - b.y())) ++bad_euclid;
    const auto end = oracle::rebuild(paths[i]);
    const double err = std::max(std::hypot(end.x - b.x(), end.y - b.y()), std::abs(oracle::angle_diff(end.th, b.theta())));
    worst_end = std::max(worst_end, err);
  }
  const bool pass = bad_len == 0 && bad_euclid == 0 && worst_end <= 1e-6 && secs < 5.0;
  return {pass, fmt("1000 pairs, max(len - oracle) %.2e, over oracle+1e-3: %d, below euclid: %d, endpoint err %.2e, %.3f s",
                    worst_gap, bad_len, bad_euclid, worst_end, secs)};
}

Outcome gtsp_equivalence() {
  const auto t0 = Clock::now();
  int within = 0, singleton = 0, singleton_ok = 0;
  double worst = 0.0;
  InstanceConfig ic;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto inst = generate(3, 7000 + s, ic);
    const int n_pos = 1 + static_cast<int>(s % 3);
    const auto clusters = sample_poses(inst, n_pos, 1);
    const auto g = build_gtsp(clusters, inst.turn_radius, true);
    const auto a = noon_bean(g);
    const auto decoded = decode_tour(solve_atsp(a, {}), a);
    const double cost = gtsp_tour_cost(g, decoded.nodes);
    const double opt = oracle::gtsp_brute_force(g).cost;
    const double ratio = opt > 0.0 ? cost / opt : (cost <= 0.0 ? 1.0 : 1e9);
    worst = std::max(worst, ratio);
    if (ratio <= 1.05) ++within;
    if (n_pos == 1) {
      ++singleton;
      if (ratio <= 1.0 + 1e-9) ++singleton_ok;
    }
  }
  const double secs = since(t0);
  const bool pass = within >= 95 && singleton_ok == singleton && secs < 30.0;
  return {pass, fmt("within 1.05x: %d/100, singleton exact: %d/%d, worst ratio %.6f, %.2f s", within, singleton_ok,
                    singleton, worst, secs)};
}

Outcome expert_completeness() {
  const auto t0 = Clock::now();
  const EnvConfig env;
  const unsigned workers = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
  std::vector<int> planned(100, 0), replayed(100, 0);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < 100; i += workers) {
        const auto inst = generate(20, 30000 + i);
        try {
          Episode ep{inst, plan(inst, {}, {}, env.step_dist())};
          planned[i] = ep.expert.sensed_order.size() == 20;
          const auto r = evaluate_expert({ep}, {});
          replayed[i] = r.records.front().success();
        } catch (const SensingGap&) {
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  int p = 0, r = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    p += planned[i];
    r += replayed[i];
  }
  const double secs = since(t0);
  return {p == 100 && r == 100 && secs < 1200.0,
          fmt("plan senses all: %d/100, replay senses all: %d/100, %.1f s", p, r, secs)};
}

Outcome reward_fidelity() {
  struct Case {
    const char* name;
    double got, want;
  };
  const Case cases[] = {
      {"imitation(3)", imitation_reward(3), 0.0},
      {"imitation(10)", imitation_reward(10), -0.1},
      {"imitation(61)", imitation_reward(61), -10.0},
      {"imitation(60)", imitation_reward(60), -24.1},
      {"goal(no activation)", goal_reward(0, false), 0.1},
      {"goal(one activation)", goal_reward(1, false), 5.1},
      {"goal(all sensed)", goal_reward(1, true), 10.0},
  };
  std::string failed;
  for (const auto& c : cases)
    if (c.got != c.want) failed += fmt(" %s=%.17g", c.name, c.got);
  return {failed.empty(), failed.empty() ? "7/7 exact" : "mismatch:" + failed};
}

double network_grad_error(Network net, SplitMix64& rng, int probes) {
  Eigen::VectorXd x(net.input_dim()), u(net.output_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = rng.uniform(-1, 1);
  const auto g = gradients(net, x, u);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const std::size_t li = rng.below(net.layers().size());
    auto& layer = net.layers()[li];
    double* param;
    double analytic;
    if (rng.below(4) == 0) {
      const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(layer.bias.size())));
      param = &layer.bias(r);
      analytic = g.layers[li].bias(r);
    } else {
      const auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(layer.weight.rows())));
      const auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(layer.weight.cols())));
      param = &layer.weight(r, c);
      analytic = g.layers[li].weight(r, c);
    }
    const double h = 1e-6, keep = *param;
    *param = keep + h;
    const double fp = net.forward(x).dot(u);
    *param = keep - h;
    const double fm = net.forward(x).dot(u);
    *param = keep;
    const double numeric = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric)));
  }
  return worst;
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  const auto b = ModelBundle::create(BundleDims::for_tasks(20), 77);
  SplitMix64 rng(78);
  double worst = 0.0;
  std::string per;
  for (const auto& [name, net] : {std::pair<const char*, const Network*>{"encoder", &b.encoder},
                                  {"policy", &b.policy},
                                  {"critic", &b.critic},
                                  {"adaptation", &b.adaptation}}) {
    const double e = network_grad_error(*net, rng, 100);
    worst = std::max(worst, e);
    per += fmt(" %s %.1e", name, e);
  }
  const double secs = since(t0);
  return {worst < 1e-4 && secs < 60.0, fmt("max rel err%s, %.2f s", per.c_str(), secs)};
}

DemoConfig desk_demo_config(std::size_t tasks, double side) {
  DemoConfig d;
  d.n_tasks = tasks;
  d.instance.map_width = side;
  d.instance.map_height = side;
  d.sampling = {3, 2, 0.8};
  return d;
}

Outcome bc_privileged_gap() {
  const auto t0 = Clock::now();
  const auto dc = desk_demo_config(5, 400);
  const auto rep = collect_many(500, 1, dc, 0, std::max(1u, std::thread::hardware_concurrency()));
  if (rep.accepted.size() < 500) return {false, fmt("only %zu demonstrations accepted", rep.accepted.size())};
  TrainConfig tc;
  tc.bc_epochs = 30;
  const auto dims = BundleDims::for_tasks(5);
  auto with = ModelBundle::create(dims, 1);
  auto without = with;
  const double acc_pi = bc_pretrain(rep.accepted, with, tc, true).final_validation_accuracy();
  progress(fmt("BC with privileged input: %.3f", acc_pi));
  const double acc_zero = bc_pretrain(rep.accepted, without, tc, false).final_validation_accuracy();
  const double secs = since(t0);
  return {acc_pi - acc_zero >= 0.15 && secs < 1800.0,
          fmt("500 demos, validation accuracy %.3f with vs %.3f zeroed, gap %.3f, %.1f s", acc_pi, acc_zero,
              acc_pi - acc_zero, secs)};
}

struct Pipeline {
  Outcome distill;
  Outcome end_to_end;
};

Pipeline scaled_pipeline() {
  const auto t0 = Clock::now();
  const auto dc = desk_demo_config(3, 300);
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  const auto rep = collect_many(1000, 1, dc, 0, workers);
  progress(fmt("collected %zu demonstrations", rep.accepted.size()));

  TrainConfig tc;
  tc.bc_epochs = 30;
  tc.steps_budget = 200'000;
  tc.distill_epochs = 50;
  const auto dims = BundleDims::for_tasks(3);
  auto bundle = ModelBundle::create(dims, 1);
  const auto bc = bc_pretrain(rep.accepted, bundle, tc, true);
  critic_init(rep.accepted, bundle, tc);
  progress(fmt("BC validation accuracy %.3f", bc.final_validation_accuracy()));

  const auto factory = make_episode_factory(3, dc.instance, dc.sampling, dc.solver, dc.env);
  const auto ppo = ppo_finetune(factory, bundle, tc, dc.env);
  progress(fmt("PPO %zu steps, best checkpoint %zu", ppo.steps, ppo.best_checkpoint));

  const auto td = Clock::now();
  const auto dist = distill_adaptation(rep.accepted, bundle, tc);
  const double dist_secs = since(td);
  Pipeline out;
  out.distill = {dist.heldout_mse < dist.heldout_z_variance && dist.action_agreement >= 0.95 && dist_secs < 600.0,
                 fmt("held-out mse %.3f vs z variance %.3f, action agreement %.3f, %.1f s", dist.heldout_mse,
                     dist.heldout_z_variance, dist.action_agreement, dist_secs)};

  std::vector<Episode> eval_eps;
  for (std::uint64_t s = 900000; eval_eps.size() < 50; ++s) {
    try {
      eval_eps.push_back(factory(s));
    } catch (const SensingGap&) {
    }
  }
  EvalConfig ec;
  ec.env = dc.env;
  const double ours = evaluate(bundle, eval_eps, ec).metrics.sensing_rate;

  TrainConfig dense_cfg = tc;
  dense_cfg.use_privileged = false;
  auto dense = ModelBundle::create(dims, 1);
  ppo_finetune(factory, dense, dense_cfg, dc.env);
  EvalConfig dense_eval = ec;
  dense_eval.zero_privileged = true;
  const double baseline = evaluate(dense, eval_eps, dense_eval).metrics.sensing_rate;
  const double secs = since(t0);
  out.end_to_end = {ours >= 0.9 && ours > baseline && secs < 7200.0,
                    fmt("distilled policy sensing %.3f vs dense baseline %.3f over 50 episodes, %zu PPO steps, %.1f s",
                        ours, baseline, ppo.steps, secs)};
  return out;
}

Outcome speedup() {
  const auto t0 = Clock::now();
  std::vector<Instance> insts;
  for (std::uint64_t s = 0; s < 20; ++s) insts.push_back(generate(20, 50000 + s));
  const auto bundle = ModelBundle::create(BundleDims::for_tasks(20), 3);
  const auto r = benchmark_speed(insts, bundle, {}, {}, {});
  const double secs = since(t0);
  return {r.median_policy_seconds * 10.0 <= r.median_expert_seconds && secs < 1800.0,
          fmt("median expert %.4f s, median policy %.4f s, expert/policy %.1fx, %.1f s", r.median_expert_seconds,
              r.median_policy_seconds, r.ratio, secs)};
}

Outcome determinism() {
  const auto dc = desk_demo_config(3, 300);
  const auto rep = collect_many(40, 200, dc, 0, 1);
  int replay_ok = 0;
  for (const auto& d : rep.accepted) {
    const auto inst = generate(dc.n_tasks, d.seed, dc.instance);
    const auto expert = plan(inst, dc.sampling, dc.solver, dc.env.step_dist());
    Env env(dc.env);
    env.reset(inst, &expert, EnvMode::Train);
    bool same = true;
    for (const auto& t : d.transitions) same = same && env.step(t.action).reward.total == t.reward;
    replay_ok += same;
  }
  TrainConfig tc;
  tc.bc_epochs = 5;
  auto a = ModelBundle::create(BundleDims::for_tasks(3), 9);
  auto b = a;
  const auto ra = bc_pretrain(rep.accepted, a, tc);
  const auto rb = bc_pretrain(rep.accepted, b, tc);
  bool same_curve = ra.epochs.size() == rb.epochs.size();
  for (std::size_t i = 0; same_curve && i < ra.epochs.size(); ++i)
    same_curve = ra.epochs[i].train_loss == rb.epochs[i].train_loss &&
                 ra.epochs[i].validation_accuracy == rb.epochs[i].validation_accuracy;
  const bool pass = replay_ok == static_cast<int>(rep.accepted.size()) && a == b && same_curve;
  return {pass, fmt("replayed %d/%zu reward streams bit-exact, BC fingerprints %016llx / %016llx", replay_ok,
                    rep.accepted.size(), static_cast<unsigned long long>(a.fingerprint()),
                    static_cast<unsigned long long>(b.fingerprint()))};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, Outcome>> results(10);
  auto run = [&](int i, const char* name, const std::function<Outcome()>& f) {
    std::fprintf(stderr, "[%d] %s\n", i + 1, name);
    results[i] = {name, f()};
  };
  run(0, "dubins optimality", dubins_optimality);
  run(1, "gtsp oracle equivalence", gtsp_equivalence);
  run(2, "expert sensing completeness", expert_completeness);
  run(3, "reward unit fidelity", reward_fidelity);
  run(4, "network gradient check", gradient_check);
  run(5, "bc privileged-information gap", bc_privileged_gap);
  std::fprintf(stderr, "[7, 8] scaled pipeline\n");
  const auto pipe = scaled_pipeline();
  results[6] = {"distillation fidelity", pipe.distill};
  results[7] = {"end-to-end scaled pipeline", pipe.end_to_end};
  run(8, "speedup over expert", speedup);
  run(9, "determinism", determinism);

  int failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& [name, o] = results[i];
    std::printf("%s %2zu %-32s %s\n", o.pass ? "PASS" : "FAIL", i + 1, name.c_str(), o.detail.c_str());
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
  return failed == 0 ? 0 : 1;
}
