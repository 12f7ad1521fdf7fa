#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtspn/env.hpp"
#include "dtspn/expert.hpp"
#include "dtspn/instance.hpp"

namespace dtspn {

struct Transition {
  std::vector<double> common_obs;
  std::vector<double> privileged_obs;
  int action = 0;
  double reward = 0.0;
  bool done = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Demonstration {
  std::uint64_t seed = 0;
  std::vector<Transition> transitions;
  bool sensed_all = false;
  double return_undiscounted = 0.0;
  double return_discounted = 0.0;

  friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

/// Controller failed to keep the vehicle near the expert path.
class TrackingFailure : public std::runtime_error {
 public:
  TrackingFailure(const std::string& what, double max_deviation, int step)
      : std::runtime_error(what), max_deviation_(max_deviation), step_(step) {}
  double max_deviation() const { return max_deviation_; }
  int step() const { return step_; }

 private:
  double max_deviation_;
  int step_;
};

struct DemoConfig {
  EnvConfig env;
  InstanceConfig instance;
  std::size_t n_tasks = 20;
  SamplingConfig sampling;
  SolverConfig solver;
  int lookahead = 2;
  double gamma = 0.95;
};

/// Action whose one-step successor lands closest to the target position.
/// Ties go to the smaller |omega|, then the lower index.
int greedy_action(const Pose& pose, const Pose& target, const EnvConfig& config);

/// Waypoint at progress_idx + lookahead, clamped to the last waypoint.
Pose track_target(const SimState& sim, const ExpertPath& expert, int lookahead = 2);

/// Sum of gamma^t * r_t over the rewards.
double discounted_return(const std::vector<double>& rewards, double gamma);

/// Rolls the greedy tracker through a training-mode episode.
/// Throws TrackingFailure when the cutoff is hit or not every task is sensed.
Demonstration collect(const Instance& instance, const ExpertPath& expert, const DemoConfig& config);

struct CollectionReport {
  std::vector<Demonstration> accepted;
  std::vector<std::uint64_t> rejected_seeds;
  std::vector<std::string> rejection_reasons;
  double acceptance_rate() const;
};

/// Collects demonstrations for seeds first_seed, first_seed + 1, ... until
/// `count` are accepted or `max_attempts` seeds were tried. Results are
/// ordered by seed regardless of the worker count.
CollectionReport collect_many(std::size_t count, std::uint64_t first_seed, const DemoConfig& config,
                              std::size_t max_attempts = 0, unsigned workers = 1);

/// Header of a dataset file: everything needed to check encoding compatibility.
struct DatasetHeader {
  EnvConfig env;
  InstanceConfig instance;
  std::uint32_t n_tasks = 0;
  std::uint32_t common_dim = 0;
  std::uint32_t privileged_dim = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Demonstration> demos;

  std::size_t n_transitions() const;
};

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
/// When expected_tasks is nonzero the file's task count must match.
Dataset load_dataset(const std::filesystem::path& path, std::uint32_t expected_tasks = 0);

}  // namespace dtspn
