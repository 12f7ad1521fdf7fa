#include "dtspn/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dtspn/errors.hpp"

namespace dtspn {

double EnvConfig::omega(int action) const {
  if (action < 0 || action >= n_actions) {
    throw ValidationError("action " + std::to_string(action) + " outside [0, " + std::to_string(n_actions) + ")");
  }
  if (n_actions == 1) return 0.0;
  return omega_max * (static_cast<double>(2 * action - (n_actions - 1)) / static_cast<double>(n_actions - 1));
}

void EnvConfig::validate() const {
  if (!(v > 0.0) || !(dt > 0.0)) throw ValidationError("speed and timestep must be positive");
  if (n_actions < 1) throw ValidationError("n_actions must be at least 1");
  if (!(omega_max > 0.0)) throw ValidationError("omega_max must be positive");
  if (std::abs(turn_radius - v / omega_max) > 1e-9) {
    throw ValidationError("turn radius must equal v / omega_max");
  }
  if (max_steps_eval < 1 || max_steps_train < 1) throw ValidationError("step caps must be positive");
  if (!(train_cutoff_dist > 0.0) || !(sense_substep > 0.0)) throw ValidationError("distances must be positive");
  if (progress_window < 1) throw ValidationError("progress window must be positive");
}

double imitation_reward(double r) {
  if (r > 60.0) return -10.0;
  // 0.1 - (r - 5)^2 / 125 with a single rounding for integral r
  if (r > 5.0) return (12.5 - (r - 5.0) * (r - 5.0)) / 125.0;
  return 0.0;
}

double goal_reward(int newly_sensed, bool all_sensed, int total_sensed, bool literal) {
  if (all_sensed) return 10.0;
  if (newly_sensed > 0) return 0.1 + 5.0 * (literal ? total_sensed : newly_sensed);
  return 0.1;
}

Pose propagate(const Pose& p, double omega, double v, double dt) {
  const double th = p.theta();
  if (omega == 0.0) return {p.x() + v * dt * std::cos(th), p.y() + v * dt * std::sin(th), th};
  const double radius = v / omega;
  const double th1 = th + omega * dt;
  return {p.x() + radius * (std::sin(th1) - std::sin(th)), p.y() - radius * (std::cos(th1) - std::cos(th)), th1};
}

double polyline_distance(const std::vector<Pose>& wps, double x, double y) {
  if (wps.empty()) return 0.0;
  double best = wps.front().distance_to(x, y);
  for (std::size_t i = 1; i < wps.size(); ++i) {
    const double ax = wps[i - 1].x(), ay = wps[i - 1].y();
    const double bx = wps[i].x(), by = wps[i].y();
    const double ex = bx - ax, ey = by - ay;
    const double len2 = ex * ex + ey * ey;
    double u = len2 > 0.0 ? ((x - ax) * ex + (y - ay) * ey) / len2 : 0.0;
    u = std::clamp(u, 0.0, 1.0);
    best = std::min(best, std::hypot(x - (ax + u * ex), y - (ay + u * ey)));
  }
  return best;
}

std::vector<double> encode_common(const SimState& sim, const Instance& inst) {
  const std::size_t n = inst.tasks.size();
  std::vector<double> out;
  out.reserve(common_dim(n));
  const double hx = inst.map_width / 2.0, hy = inst.map_height / 2.0;
  const double diag = std::hypot(inst.map_width, inst.map_height);
  const Pose& p = sim.pose;
  out.push_back((p.x() - hx) / hx);
  out.push_back((p.y() - hy) / hy);
  out.push_back(p.theta() / kPi);
  const double c = std::cos(p.theta()), s = std::sin(p.theta());
  for (const auto& t : inst.tasks) {
    const double dx = t.x - p.x(), dy = t.y - p.y();
    const double bx = c * dx + s * dy;
    const double by = -s * dx + c * dy;
    out.push_back(bx / diag);
    out.push_back(by / diag);
    out.push_back((bx == 0.0 && by == 0.0) ? 0.0 : std::atan2(by, bx) / kPi);
  }
  for (std::size_t i = 0; i < n; ++i) out.push_back(sim.sensed[i] ? 1.0 : 0.0);
  return out;
}

std::vector<double> encode_privileged(const SimState& sim, const ExpertPath& expert, const EnvConfig& config) {
  std::vector<double> out;
  out.reserve(kPrivilegedDim);
  const auto& wps = expert.waypoints;
  const Pose& p = sim.pose;
  const double c = std::cos(p.theta()), s = std::sin(p.theta());
  const double scale = static_cast<double>(kPrivilegedWaypoints) * config.step_dist();
  for (std::size_t k = 1; k <= kPrivilegedWaypoints; ++k) {
    if (wps.empty()) {
      out.insert(out.end(), {0.0, 0.0, 0.0});
      continue;
    }
    const auto& w = wps[std::min(sim.progress_idx + k, wps.size() - 1)];
    const double dx = w.x() - p.x(), dy = w.y() - p.y();
    out.push_back((c * dx + s * dy) / scale);
    out.push_back((-s * dx + c * dy) / scale);
    out.push_back(normalize_angle(w.theta() - p.theta()) / kPi);
  }
  return out;
}

std::size_t advance_progress(std::size_t current, const Pose& pose, const std::vector<Pose>& wps, int window) {
  if (wps.empty()) return 0;
  current = std::min(current, wps.size() - 1);
  const std::size_t last = std::min(wps.size() - 1, current + static_cast<std::size_t>(window));
  std::size_t best = current;
  double best_d = wps[current].distance_to(pose);
  for (std::size_t i = current + 1; i <= last; ++i) {
    const double d = wps[i].distance_to(pose);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Env::Env(EnvConfig config) : config_(config) { config_.validate(); }

Observation Env::reset(const Instance& instance, const ExpertPath* expert, EnvMode mode) {
  instance.validate();
  if (mode == EnvMode::Train && expert == nullptr) throw ValidationError("training mode requires an expert path");
  if (std::abs(instance.turn_radius - config_.turn_radius) > 1e-9) {
    throw ValidationError("instance turn radius does not match the environment configuration");
  }
  instance_ = instance;
  if (expert) {
    expert_ = *expert;
  } else {
    expert_.reset();
  }
  mode_ = mode;
  sim_ = SimState{};
  sim_.pose = instance.start;
  if (expert_ && !expert_->waypoints.empty()) sim_.pose = instance.start.with_theta(expert_->waypoints.front().theta());
  sim_.sensed.assign(instance.tasks.size(), false);
  std::vector<std::size_t> newly;
  sense_at(sim_.pose.x(), sim_.pose.y(), newly);
  if (expert_) sim_.progress_idx = advance_progress(0, sim_.pose, expert_->waypoints, config_.progress_window);
  done_ = std::all_of(sim_.sensed.begin(), sim_.sensed.end(), [](bool b) { return b; });
  return observe();
}

int Env::sense_at(double x, double y, std::vector<std::size_t>& newly) {
  int count = 0;
  for (std::size_t i = 0; i < instance_.tasks.size(); ++i) {
    if (sim_.sensed[i]) continue;
    if (std::hypot(instance_.tasks[i].x - x, instance_.tasks[i].y - y) <= instance_.r_sense) {
      sim_.sensed[i] = true;
      newly.push_back(i);
      ++count;
    }
  }
  return count;
}

StepResult Env::step(int action) {
  if (done_) throw std::logic_error("step called on a finished episode");
  const double omega = config_.omega(action);
  const Pose start = sim_.pose;

  StepResult res;
  const int n_sub = std::max(1, static_cast<int>(std::ceil(config_.step_dist() / config_.sense_substep - 1e-12)));
  for (int k = 1; k < n_sub; ++k) {
    const Pose mid = propagate(start, omega, config_.v, config_.dt * k / n_sub);
    sense_at(mid.x(), mid.y(), res.info.newly_sensed_tasks);
  }
  sim_.pose = propagate(start, omega, config_.v, config_.dt);
  sense_at(sim_.pose.x(), sim_.pose.y(), res.info.newly_sensed_tasks);
  ++sim_.t;

  auto& rw = res.reward;
  if (expert_) {
    sim_.progress_idx = advance_progress(sim_.progress_idx, sim_.pose, expert_->waypoints, config_.progress_window);
    rw.r = polyline_distance(expert_->waypoints, sim_.pose.x(), sim_.pose.y());
  }
  const int total = static_cast<int>(std::count(sim_.sensed.begin(), sim_.sensed.end(), true));
  rw.newly_sensed = static_cast<int>(res.info.newly_sensed_tasks.size());
  const bool all = total == static_cast<int>(sim_.sensed.size());
  res.info.all_sensed = all;
  rw.imitation = imitation_reward(rw.r);
  rw.goal = goal_reward(rw.newly_sensed, all && rw.newly_sensed > 0, total, config_.literal_goal_reward);
  rw.total = rw.imitation + rw.goal;

  if (all) {
    res.done = true;
  } else if (mode_ == EnvMode::Train && rw.r > config_.train_cutoff_dist) {
    res.done = true;
    res.info.cutoff = true;
  } else {
    const int cap = mode_ == EnvMode::Train ? config_.max_steps_train : config_.max_steps_eval;
    if (sim_.t >= cap) {
      res.done = true;
      res.info.truncated = true;
    }
  }
  done_ = res.done;
  res.obs = observe();
  return res;
}

Observation Env::observe() const {
  Observation obs;
  obs.common = encode_common(sim_, instance_);
  if (expert_) obs.privileged = encode_privileged(sim_, *expert_, config_);
  return obs;
}

}  // namespace dtspn
