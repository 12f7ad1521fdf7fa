#include "dtspn/demos.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "dtspn/binary_io.hpp"
#include "dtspn/errors.hpp"

namespace dtspn {

int greedy_action(const Pose& pose, const Pose& target, const EnvConfig& config) {
  int best = -1;
  double best_d = 0.0;
  double best_w = 0.0;
  for (int a = 0; a < config.n_actions; ++a) {
    const double w = config.omega(a);
    const Pose next = propagate(pose, w, config.v, config.dt);
    const double d = next.distance_to(target);
    if (best < 0 || d < best_d || (d == best_d && std::abs(w) < best_w)) {
      best = a;
      best_d = d;
      best_w = std::abs(w);
    }
  }
  return best;
}

Pose track_target(const SimState& sim, const ExpertPath& expert, int lookahead) {
  const auto& wps = expert.waypoints;
  if (wps.empty()) return sim.pose;
  const std::size_t idx = std::min(sim.progress_idx + static_cast<std::size_t>(std::max(lookahead, 0)), wps.size() - 1);
  return wps[idx];
}

double discounted_return(const std::vector<double>& rewards, double gamma) {
  double g = 0.0, w = 1.0;
  for (double r : rewards) {
    g += w * r;
    w *= gamma;
  }
  return g;
}

Demonstration collect(const Instance& instance, const ExpertPath& expert, const DemoConfig& config) {
  Env env(config.env);
  Observation obs = env.reset(instance, &expert, EnvMode::Train);
  Demonstration demo;
  demo.seed = instance.seed;
  std::vector<double> rewards;
  double max_dev = 0.0;
  StepInfo last;
  while (!env.done()) {
    const Pose target = track_target(env.state(), expert, config.lookahead);
    const int action = greedy_action(env.state().pose, target, config.env);
    auto res = env.step(action);
    max_dev = std::max(max_dev, res.reward.r);
    demo.transitions.push_back({std::move(obs.common), std::move(*obs.privileged), action, res.reward.total, res.done});
    rewards.push_back(res.reward.total);
    last = res.info;
    obs = std::move(res.obs);
  }
  const auto& sensed = env.state().sensed;
  demo.sensed_all = std::all_of(sensed.begin(), sensed.end(), [](bool b) { return b; });
  if (last.cutoff) {
    throw TrackingFailure("tracking cutoff exceeded at step " + std::to_string(env.state().t), max_dev, env.state().t);
  }
  if (!demo.sensed_all) {
    throw TrackingFailure("episode ended without sensing every task", max_dev, env.state().t);
  }
  demo.return_undiscounted = 0.0;
  for (double r : rewards) demo.return_undiscounted += r;
  demo.return_discounted = discounted_return(rewards, config.gamma);
  return demo;
}

double CollectionReport::acceptance_rate() const {
  const double total = static_cast<double>(accepted.size() + rejected_seeds.size());
  return total > 0.0 ? static_cast<double>(accepted.size()) / total : 0.0;
}

namespace {

struct Attempt {
  std::uint64_t seed = 0;
  bool ok = false;
  Demonstration demo;
  std::string reason;
};

Attempt attempt_seed(std::uint64_t seed, const DemoConfig& config) {
  Attempt a;
  a.seed = seed;
  try {
    const auto inst = generate(config.n_tasks, seed, config.instance);
    const auto expert = plan(inst, config.sampling, config.solver, config.env.step_dist());
    a.demo = collect(inst, expert, config);
    a.ok = true;
  } catch (const TrackingFailure& e) {
    a.reason = e.what();
  } catch (const SensingGap& e) {
    a.reason = e.what();
  }
  return a;
}

}  // namespace

CollectionReport collect_many(std::size_t count, std::uint64_t first_seed, const DemoConfig& config,
                              std::size_t max_attempts, unsigned workers) {
  if (max_attempts == 0) max_attempts = count * 2 + 16;
  workers = std::max(1u, workers);
  CollectionReport report;
  std::uint64_t next = first_seed;
  std::size_t tried = 0;
  while (report.accepted.size() < count && tried < max_attempts) {
    const std::size_t chunk = std::min<std::size_t>(max_attempts - tried, std::max<std::size_t>(workers, 1) * 4);
    std::vector<Attempt> results(chunk);
    if (workers == 1) {
      for (std::size_t i = 0; i < chunk; ++i) results[i] = attempt_seed(next + i, config);
    } else {
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < chunk; i += workers) results[i] = attempt_seed(next + i, config);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (auto& r : results) {
      if (report.accepted.size() >= count) break;
      ++tried;
      if (r.ok) {
        report.accepted.push_back(std::move(r.demo));
      } else {
        report.rejected_seeds.push_back(r.seed);
        report.rejection_reasons.push_back(r.reason);
      }
    }
    next += chunk;
  }
  return report;
}

std::size_t Dataset::n_transitions() const {
  std::size_t n = 0;
  for (const auto& d : demos) n += d.transitions.size();
  return n;
}

namespace {

constexpr char kMagic[9] = "DTSPDEMO";
constexpr std::uint32_t kVersion = 1;

void write_env(std::ostream& out, const EnvConfig& e) {
  io::write<double>(out, e.v);
  io::write<double>(out, e.dt);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(e.n_actions));
  io::write<double>(out, e.omega_max);
  io::write<double>(out, e.turn_radius);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(e.max_steps_eval));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(e.max_steps_train));
  io::write<double>(out, e.train_cutoff_dist);
  io::write<double>(out, e.sense_substep);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(e.progress_window));
  io::write<std::uint8_t>(out, e.literal_goal_reward ? 1 : 0);
}

EnvConfig read_env(std::istream& in) {
  EnvConfig e;
  e.v = io::read<double>(in, "env.v");
  e.dt = io::read<double>(in, "env.dt");
  e.n_actions = static_cast<int>(io::read<std::uint32_t>(in, "env.n_actions"));
  e.omega_max = io::read<double>(in, "env.omega_max");
  e.turn_radius = io::read<double>(in, "env.turn_radius");
  e.max_steps_eval = static_cast<int>(io::read<std::uint32_t>(in, "env.max_steps_eval"));
  e.max_steps_train = static_cast<int>(io::read<std::uint32_t>(in, "env.max_steps_train"));
  e.train_cutoff_dist = io::read<double>(in, "env.train_cutoff_dist");
  e.sense_substep = io::read<double>(in, "env.sense_substep");
  e.progress_window = static_cast<int>(io::read<std::uint32_t>(in, "env.progress_window"));
  e.literal_goal_reward = io::read<std::uint8_t>(in, "env.literal_goal_reward") != 0;
  return e;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const auto& h = ds.header;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  io::write_magic(out, kMagic);
  io::write<std::uint32_t>(out, kVersion);
  write_env(out, h.env);
  io::write<double>(out, h.instance.map_width);
  io::write<double>(out, h.instance.map_height);
  io::write<double>(out, h.instance.r_sense);
  io::write<double>(out, h.instance.turn_radius);
  const Pose start = h.instance.start_pose();
  io::write<double>(out, start.x());
  io::write<double>(out, start.y());
  io::write<double>(out, start.theta());
  io::write<std::uint32_t>(out, h.n_tasks);
  io::write<std::uint32_t>(out, h.common_dim);
  io::write<std::uint32_t>(out, h.privileged_dim);
  io::write<std::uint64_t>(out, ds.demos.size());
  for (const auto& d : ds.demos) {
    if (!d.sensed_all) throw ValidationError("only accepted demonstrations can be saved");
    io::write<std::uint64_t>(out, d.seed);
    io::write<std::uint32_t>(out, static_cast<std::uint32_t>(d.transitions.size()));
    for (const auto& t : d.transitions) {
      if (t.common_obs.size() != h.common_dim || t.privileged_obs.size() != h.privileged_dim) {
        throw ShapeError("transition dims (" + std::to_string(t.common_obs.size()) + ", " +
                         std::to_string(t.privileged_obs.size()) + ") do not match header (" +
                         std::to_string(h.common_dim) + ", " + std::to_string(h.privileged_dim) + ")");
      }
      for (double v : t.common_obs) io::write<double>(out, v);
      for (double v : t.privileged_obs) io::write<double>(out, v);
      io::write<double>(out, t.reward);
      io::write<std::uint8_t>(out, static_cast<std::uint8_t>(t.action));
      io::write<std::uint8_t>(out, t.done ? 1 : 0);
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Dataset load_dataset(const std::filesystem::path& path, std::uint32_t expected_tasks) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset '" + path.string() + "'");
  io::expect_magic(in, kMagic, path.string());
  const auto version = io::read<std::uint32_t>(in, "version");
  if (version != kVersion) {
    throw ShapeError("dataset version mismatch: expected " + std::to_string(kVersion) + ", found " +
                     std::to_string(version));
  }
  Dataset ds;
  auto& h = ds.header;
  h.env = read_env(in);
  h.instance.map_width = io::read<double>(in, "map_width");
  h.instance.map_height = io::read<double>(in, "map_height");
  h.instance.r_sense = io::read<double>(in, "r_sense");
  h.instance.turn_radius = io::read<double>(in, "turn_radius");
  const double sx = io::read<double>(in, "start.x");
  const double sy = io::read<double>(in, "start.y");
  const double st = io::read<double>(in, "start.theta");
  h.instance.start = Pose(sx, sy, st);
  h.n_tasks = io::read<std::uint32_t>(in, "n_tasks");
  h.common_dim = io::read<std::uint32_t>(in, "common_dim");
  h.privileged_dim = io::read<std::uint32_t>(in, "privileged_dim");
  if (expected_tasks != 0 && expected_tasks != h.n_tasks) {
    throw ShapeError("dataset task count mismatch: expected " + std::to_string(expected_tasks) + " tasks (common dim " +
                     std::to_string(common_dim(expected_tasks)) + "), found " + std::to_string(h.n_tasks) +
                     " tasks (common dim " + std::to_string(h.common_dim) + ")");
  }
  if (h.common_dim != common_dim(h.n_tasks) || h.privileged_dim != kPrivilegedDim) {
    throw ShapeError("dataset encoding dims inconsistent: expected (" + std::to_string(common_dim(h.n_tasks)) + ", " +
                     std::to_string(kPrivilegedDim) + "), found (" + std::to_string(h.common_dim) + ", " +
                     std::to_string(h.privileged_dim) + ")");
  }
  const auto count = io::read<std::uint64_t>(in, "record count");
  ds.demos.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Demonstration d;
    d.seed = io::read<std::uint64_t>(in, "seed");
    const auto n = io::read<std::uint32_t>(in, "transition count");
    d.transitions.resize(n);
    std::vector<double> rewards;
    rewards.reserve(n);
    for (auto& t : d.transitions) {
      t.common_obs.resize(h.common_dim);
      t.privileged_obs.resize(h.privileged_dim);
      for (auto& v : t.common_obs) v = io::read<double>(in, "observation");
      for (auto& v : t.privileged_obs) v = io::read<double>(in, "privileged observation");
      t.reward = io::read<double>(in, "reward");
      t.action = io::read<std::uint8_t>(in, "action");
      t.done = io::read<std::uint8_t>(in, "done") != 0;
      rewards.push_back(t.reward);
    }
    d.sensed_all = true;
    for (double r : rewards) d.return_undiscounted += r;
    d.return_discounted = discounted_return(rewards, 0.95);
    ds.demos.push_back(std::move(d));
  }
  return ds;
}

}  // namespace dtspn
