#include "dtspn/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dtspn/errors.hpp"

namespace dtspn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

using StatePolicy = std::function<int(const Env&, const Observation&)>;

EpisodeRecord run_episode(const StatePolicy& policy, const Episode& ep, const EvalConfig& config) {
  Env env(config.env);
  EpisodeRecord rec;
  rec.seed = ep.instance.seed;
  const auto t0 = Clock::now();
  Observation obs = env.reset(ep.instance, ep.expert.waypoints.empty() ? nullptr : &ep.expert, EnvMode::Eval);
  rec.poses.push_back(env.state().pose);
  rec.sensed_at.assign(ep.instance.n_tasks(), -1);
  for (std::size_t i = 0; i < rec.sensed_at.size(); ++i)
    if (env.state().sensed[i]) rec.sensed_at[i] = 0;
  while (!env.done()) {
    const int a = policy(env, obs);
    auto res = env.step(a);
    rec.actions.push_back(a);
    rec.poses.push_back(env.state().pose);
    rec.r_imitation.push_back(res.reward.imitation);
    rec.r_goal.push_back(res.reward.goal);
    rec.newly_sensed.push_back(res.reward.newly_sensed);
    rec.done.push_back(res.done);
    for (std::size_t i : res.info.newly_sensed_tasks) rec.sensed_at[i] = env.state().t;
    obs = std::move(res.obs);
  }
  rec.seconds = seconds_since(t0);
  return rec;
}

}  // namespace

std::vector<double> EpisodeRecord::rewards() const {
  std::vector<double> r(r_imitation.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = r_imitation[i] + r_goal[i];
  return r;
}

double EpisodeRecord::total_reward() const {
  double s = 0.0;
  for (double r : rewards()) s += r;
  return s;
}

double EpisodeRecord::discounted_return(double gamma) const { return dtspn::discounted_return(rewards(), gamma); }

double EpisodeRecord::sensing_fraction() const {
  if (sensed_at.empty()) return 1.0;
  const auto n = std::count_if(sensed_at.begin(), sensed_at.end(), [](int s) { return s >= 0; });
  return static_cast<double>(n) / static_cast<double>(sensed_at.size());
}

bool EpisodeRecord::success() const {
  return std::all_of(sensed_at.begin(), sensed_at.end(), [](int s) { return s >= 0; });
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Metrics summarize(const std::vector<EpisodeRecord>& records, double gamma) {
  Metrics m;
  m.episodes = records.size();
  if (records.empty()) return m;
  std::vector<double> times;
  for (const auto& r : records) {
    m.avg_reward += r.total_reward();
    m.avg_return += r.discounted_return(gamma);
    m.sensing_rate += r.sensing_fraction();
    if (r.success()) times.push_back(r.seconds);
  }
  const double n = static_cast<double>(records.size());
  m.avg_reward /= n;
  m.avg_return /= n;
  m.sensing_rate /= n;
  m.successes = times.size();
  if (!times.empty()) {
    double s = 0.0;
    for (double t : times) s += t;
    m.mean_time = s / static_cast<double>(times.size());
    m.median_time = median(times);
  }
  return m;
}

void check_compatible(const ModelBundle& bundle, const Instance& instance) {
  const auto want = static_cast<int>(common_dim(instance.n_tasks()));
  if (bundle.dims.common_dim != want) {
    throw ShapeError("checkpoint expects " + std::to_string(bundle.dims.n_tasks) + " tasks (common dim " +
                     std::to_string(bundle.dims.common_dim) + "), instance has " + std::to_string(instance.n_tasks()) +
                     " tasks (common dim " + std::to_string(want) + ")");
  }
  if (bundle.dims.privileged_dim != static_cast<int>(kPrivilegedDim)) {
    throw ShapeError("checkpoint privileged dim " + std::to_string(bundle.dims.privileged_dim) + " does not match " +
                     std::to_string(kPrivilegedDim));
  }
}

PolicyFn bundle_policy(const ModelBundle& bundle, bool pi_eval, bool zero_privileged) {
  return [&bundle, pi_eval, zero_privileged](const Observation& obs) {
    if (zero_privileged) {
      const std::vector<double> zeros(static_cast<std::size_t>(bundle.dims.privileged_dim), 0.0);
      return act(bundle, obs.common, true, std::span<const double>(zeros), true);
    }
    if (pi_eval) {
      if (!obs.privileged) throw ValidationError("privileged evaluation needs an expert path for every instance");
      return act(bundle, obs.common, true, std::span<const double>(*obs.privileged), true);
    }
    return act(bundle, obs.common, false, std::nullopt, true);
  };
}

EvalResult evaluate_policy(const PolicyFn& policy, const std::vector<Episode>& episodes, const EvalConfig& config) {
  if (episodes.empty()) throw ValidationError("evaluation needs at least one episode");
  EvalResult out;
  const StatePolicy wrapped = [&](const Env&, const Observation& o) { return policy(o); };
  for (const auto& ep : episodes) out.records.push_back(run_episode(wrapped, ep, config));
  out.metrics = summarize(out.records, config.gamma);
  return out;
}

EvalResult evaluate(const ModelBundle& bundle, const std::vector<Episode>& episodes, const EvalConfig& config) {
  for (const auto& ep : episodes) check_compatible(bundle, ep.instance);
  return evaluate_policy(bundle_policy(bundle, config.pi_eval, config.zero_privileged), episodes, config);
}

EvalResult evaluate_expert(const std::vector<Episode>& episodes, const EvalConfig& config) {
  if (episodes.empty()) throw ValidationError("evaluation needs at least one episode");
  EvalResult out;
  for (const auto& ep : episodes) {
    if (ep.expert.waypoints.empty()) throw ValidationError("expert replay needs an expert path");
    EpisodeRecord rec = run_episode(
        [&](const Env& env, const Observation&) {
          return greedy_action(env.state().pose, track_target(env.state(), ep.expert, config.lookahead), config.env);
        },
        ep, config);
    rec.seconds += ep.expert.solve_seconds;
    out.records.push_back(std::move(rec));
  }
  out.metrics = summarize(out.records, config.gamma);
  return out;
}

SpeedReport benchmark_speed(const std::vector<Instance>& instances, const ModelBundle& bundle,
                            const SamplingConfig& sampling, const SolverConfig& solver, const EnvConfig& env) {
  if (instances.size() < 10) throw ValidationError("speed benchmark needs at least 10 instances");
  std::vector<double> te, tp;
  const PolicyFn policy = bundle_policy(bundle, false);
  EvalConfig cfg;
  cfg.env = env;
  for (const auto& inst : instances) {
    check_compatible(bundle, inst);
    auto t0 = Clock::now();
    const ExpertPath path = plan(inst, sampling, solver, env.step_dist());
    te.push_back(seconds_since(t0));
    const EpisodeRecord rec = run_episode([&](const Env&, const Observation& o) { return policy(o); }, Episode{inst, {}}, cfg);
    tp.push_back(rec.seconds);
  }
  SpeedReport r;
  r.instances = instances.size();
  r.median_expert_seconds = median(te);
  r.median_policy_seconds = median(tp);
  r.ratio = r.median_policy_seconds > 0.0 ? r.median_expert_seconds / r.median_policy_seconds
                                          : std::numeric_limits<double>::infinity();
  return r;
}

std::string render_trajectory_svg(const EpisodeRecord& record, const Instance& instance, const ExpertPath* expert) {
  const double margin = 20.0;
  const double scale = 600.0 / std::max(instance.map_width, instance.map_height);
  const double w = instance.map_width * scale, h = instance.map_height * scale;
  auto px = [&](double x) { return num(margin + x * scale); };
  auto py = [&](double y) { return num(margin + (instance.map_height - y) * scale); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w + 2 * margin + 160) << "\" height=\""
     << num(h + 2 * margin) << "\">\n";
  os << "<rect class=\"map\" x=\"" << num(margin) << "\" y=\"" << num(margin) << "\" width=\"" << num(w)
     << "\" height=\"" << num(h) << "\" fill=\"white\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < instance.tasks.size(); ++i) {
    os << "<circle class=\"task\" cx=\"" << px(instance.tasks[i].x) << "\" cy=\"" << py(instance.tasks[i].y)
       << "\" r=\"4\" fill=\"blue\"/>\n";
  }
  if (expert && !expert->waypoints.empty()) {
    os << "<polyline class=\"expert\" fill=\"none\" stroke=\"red\" stroke-width=\"2\" stroke-dasharray=\"8 5\" points=\"";
    for (std::size_t i = 0; i < expert->waypoints.size(); ++i)
      os << (i ? " " : "") << px(expert->waypoints[i].x()) << "," << py(expert->waypoints[i].y());
    os << "\"/>\n";
  }
  if (!record.poses.empty()) {
    os << "<polyline class=\"agent\" fill=\"none\" stroke=\"green\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < record.poses.size(); ++i)
      os << (i ? " " : "") << px(record.poses[i].x()) << "," << py(record.poses[i].y());
    os << "\"/>\n";
  }
  for (std::size_t i = 0; i < record.sensed_at.size(); ++i) {
    const int t = record.sensed_at[i];
    if (t < 0 || static_cast<std::size_t>(t) >= record.poses.size()) continue;
    const Pose& p = record.poses[static_cast<std::size_t>(t)];
    os << "<circle class=\"sensing\" cx=\"" << px(p.x()) << "\" cy=\"" << py(p.y()) << "\" r=\""
       << num(instance.r_sense * scale) << "\" fill=\"none\" stroke=\"green\" stroke-opacity=\"0.5\"/>\n";
  }
  const double lx = margin + w + 15, ly = margin + 10;
  os << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 30) << "\" y2=\"" << num(ly)
     << "\" stroke=\"red\" stroke-width=\"2\" stroke-dasharray=\"8 5\"/>\n";
  os << "<text x=\"" << num(lx + 36) << "\" y=\"" << num(ly + 4) << "\">expert</text>\n";
  os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly + 20) << "\" x2=\"" << num(lx + 30) << "\" y2=\""
     << num(ly + 20) << "\" stroke=\"green\" stroke-width=\"2\"/>\n";
  os << "<text x=\"" << num(lx + 36) << "\" y=\"" << num(ly + 24) << "\">agent</text>\n";
  os << "<circle cx=\"" << num(lx + 15) << "\" cy=\"" << num(ly + 40) << "\" r=\"4\" fill=\"blue\"/>\n";
  os << "<text x=\"" << num(lx + 36) << "\" y=\"" << num(ly + 44) << "\">task</text>\n";
  os << "</g>\n</svg>\n";
  return os.str();
}

void emit_trajectory_svg(const EpisodeRecord& record, const Instance& instance, const ExpertPath* expert,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << render_trajectory_svg(record, instance, expert);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_episode_csv(const EpisodeRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "t,x,y,theta,action,r_imitation,r_goal,newly_sensed,done\n";
  char buf[256];
  for (std::size_t t = 0; t < record.steps(); ++t) {
    const Pose& p = record.poses[t + 1];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%d,%d\n", t + 1, p.x(), p.y(), p.theta(),
                  record.actions[t], record.r_imitation[t], record.r_goal[t], record.newly_sensed[t],
                  record.done[t] ? 1 : 0);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

EpisodeRecord read_episode_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "t,x,y,theta,action,r_imitation,r_goal,newly_sensed,done") {
    throw ParseError(path.string() + ":1: unexpected header");
  }
  EpisodeRecord rec;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
    try {
      rec.actions.push_back(std::stoi(f[4]));
      rec.r_imitation.push_back(std::stod(f[5]));
      rec.r_goal.push_back(std::stod(f[6]));
      rec.newly_sensed.push_back(std::stoi(f[7]));
      rec.done.push_back(f[8] == "1");
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rec;
}

}  // namespace dtspn
