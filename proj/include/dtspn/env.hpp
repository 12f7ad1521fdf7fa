#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dtspn/expert.hpp"
#include "dtspn/instance.hpp"
#include "dtspn/pose.hpp"

namespace dtspn {

struct EnvConfig {
  double v = 30.0 * 0.6 * kPi;
  double dt = 0.2;
  int n_actions = 7;
  double omega_max = 0.6 * kPi;
  double turn_radius = 30.0;
  int max_steps_eval = 300;
  /// Step cap in training mode (an episode that neither finishes nor strays
  /// is truncated here).
  int max_steps_train = 300;
  double train_cutoff_dist = 60.0;
  /// Pay 0.1 + 5 * (total sensed) whenever a task activates instead of
  /// 0.1 + 5 * (newly sensed).
  bool literal_goal_reward = false;
  /// Maximum arc-length spacing of the sensing checks along a step.
  double sense_substep = 5.0;
  /// Forward search window, in waypoints, when advancing expert progress.
  int progress_window = 8;

  double step_dist() const { return v * dt; }
  double omega(int action) const;
  void validate() const;
};

enum class EnvMode { Train, Eval };

struct SimState {
  Pose pose;
  std::vector<bool> sensed;
  int t = 0;
  std::size_t progress_idx = 0;
};

struct Observation {
  std::vector<double> common;
  std::optional<std::vector<double>> privileged;
};

struct RewardBreakdown {
  double imitation = 0.0;
  double goal = 0.0;
  double total = 0.0;
  double r = 0.0;
  int newly_sensed = 0;
};

struct StepInfo {
  bool all_sensed = false;
  bool cutoff = false;
  bool truncated = false;
  std::vector<std::size_t> newly_sensed_tasks;
};

struct StepResult {
  Observation obs;
  RewardBreakdown reward;
  bool done = false;
  StepInfo info;
};

inline constexpr std::size_t kPrivilegedWaypoints = 4;
inline constexpr std::size_t kPrivilegedDim = 3 * kPrivilegedWaypoints;

inline std::size_t common_dim(std::size_t n_tasks) { return 3 + 4 * n_tasks; }

/// Piecewise imitation reward on the distance to the expert polyline.
double imitation_reward(double r);

/// Task reward. `newly_sensed` tasks activated this step, `all_sensed` is
/// true when the last task activated this step, `total_sensed` counts all
/// active flags after the step (only used by the literal reading).
double goal_reward(int newly_sensed, bool all_sensed, int total_sensed = 0, bool literal = false);

/// Exact constant-turn-rate integration over dt.
Pose propagate(const Pose& p, double omega, double v, double dt);

/// Distance from (x, y) to the polyline through the waypoints.
double polyline_distance(const std::vector<Pose>& waypoints, double x, double y);

std::vector<double> encode_common(const SimState& sim, const Instance& instance);
std::vector<double> encode_privileged(const SimState& sim, const ExpertPath& expert, const EnvConfig& config);

/// Nearest waypoint index >= current within the forward window.
std::size_t advance_progress(std::size_t current, const Pose& pose, const std::vector<Pose>& waypoints, int window);

/// DTSPN MDP: Dubins stepping, sensing bookkeeping, reward and termination.
class Env {
 public:
  explicit Env(EnvConfig config = {});

  Observation reset(const Instance& instance, const ExpertPath* expert, EnvMode mode);
  StepResult step(int action);

  const SimState& state() const { return sim_; }
  const EnvConfig& config() const { return config_; }
  const Instance& instance() const { return instance_; }
  bool has_expert() const { return expert_.has_value(); }
  const ExpertPath& expert() const { return *expert_; }
  bool done() const { return done_; }
  EnvMode mode() const { return mode_; }

  Observation observe() const;

 private:
  int sense_at(double x, double y, std::vector<std::size_t>& newly);

  EnvConfig config_;
  Instance instance_;
  std::optional<ExpertPath> expert_;
  EnvMode mode_ = EnvMode::Eval;
  SimState sim_;
  bool done_ = true;
};

}  // namespace dtspn
