#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtspn/demos.hpp"
#include "dtspn/learn.hpp"

namespace dtspn {

struct Metrics {
  double avg_reward = 0.0;
  double avg_return = 0.0;
  double sensing_rate = 0.0;
  /// Mean seconds over episodes that sensed every task; empty when none did.
  std::optional<double> mean_time;
  std::optional<double> median_time;
  std::size_t successes = 0;
  std::size_t episodes = 0;
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  /// poses[0] is the start, poses[t] the pose after step t.
  std::vector<Pose> poses;
  std::vector<int> actions;
  std::vector<double> r_imitation;
  std::vector<double> r_goal;
  std::vector<int> newly_sensed;
  std::vector<bool> done;
  /// Step after which each task was first sensed (0 = at the start), or -1.
  std::vector<int> sensed_at;
  double seconds = 0.0;

  std::size_t steps() const { return actions.size(); }
  std::vector<double> rewards() const;
  double total_reward() const;
  double discounted_return(double gamma) const;
  double sensing_fraction() const;
  bool success() const;
};

struct EvalConfig {
  EnvConfig env;
  double gamma = 0.95;
  /// Evaluate with the privileged encoder instead of the adaptation network.
  bool pi_eval = false;
  /// Evaluate with the encoder fed zeros in place of the privileged block
  /// (bundles trained without privileged input).
  bool zero_privileged = false;
  int lookahead = 2;
};

/// Maps the current observation to an action.
using PolicyFn = std::function<int(const Observation&)>;

/// Deterministic bundle policy: adaptation network by default, the encoder
/// with real or zeroed privileged input otherwise.
PolicyFn bundle_policy(const ModelBundle& bundle, bool pi_eval, bool zero_privileged = false);

/// Aggregates per-episode records.
Metrics summarize(const std::vector<EpisodeRecord>& records, double gamma);

struct EvalResult {
  Metrics metrics;
  std::vector<EpisodeRecord> records;
};

/// Runs each episode in evaluation mode with the given policy. Time covers the rollout only.
EvalResult evaluate_policy(const PolicyFn& policy, const std::vector<Episode>& episodes, const EvalConfig& config);

/// Bundle evaluation; checks the bundle against the instances first.
EvalResult evaluate(const ModelBundle& bundle, const std::vector<Episode>& episodes, const EvalConfig& config);

/// Greedy tracking of each expert path. Time includes the expert's solve time.
EvalResult evaluate_expert(const std::vector<Episode>& episodes, const EvalConfig& config);

/// Throws ShapeError when the bundle cannot consume observations of these instances.
void check_compatible(const ModelBundle& bundle, const Instance& instance);

struct SpeedReport {
  double median_expert_seconds = 0.0;
  double median_policy_seconds = 0.0;
  /// median expert / median policy
  double ratio = 0.0;
  std::size_t instances = 0;
};

/// Times expert planning and an adaptation-network rollout on each instance.
SpeedReport benchmark_speed(const std::vector<Instance>& instances, const ModelBundle& bundle,
                            const SamplingConfig& sampling, const SolverConfig& solver, const EnvConfig& env);

double median(std::vector<double> v);

std::string render_trajectory_svg(const EpisodeRecord& record, const Instance& instance, const ExpertPath* expert);
void emit_trajectory_svg(const EpisodeRecord& record, const Instance& instance, const ExpertPath* expert,
                         const std::filesystem::path& path);

void write_episode_csv(const EpisodeRecord& record, const std::filesystem::path& path);
/// Reads the action, reward and flag columns back (poses and sensing times are not restored).
EpisodeRecord read_episode_csv(const std::filesystem::path& path);

}  // namespace dtspn
