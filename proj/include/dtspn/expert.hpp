#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "dtspn/dubins.hpp"
#include "dtspn/instance.hpp"

namespace dtspn {

inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

/// Dense row-major square matrix of directed edge costs.
class CostMatrix {
 public:
  CostMatrix() = default;
  explicit CostMatrix(std::size_t n, double fill = kForbidden) : n_(n), data_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

struct SamplingConfig {
  int n_pos = 8;
  int n_head = 4;
  /// Candidate circle radius as a fraction of the sensing radius.
  double radius_factor = 0.8;
};

struct SolverConfig {
  std::uint64_t seed = 1;
  /// Improving moves per local search are capped at this factor times n.
  int move_cap_factor = 50;
  /// Random segment-swap kicks applied after the first local optimum. Problems
  /// within full_search_limit get at least ten per node, every other one a
  /// random restart.
  int kicks = 8;
  /// Candidate successor list length; problems with n <= full_search_limit scan every node.
  int neighbors = 16;
  int full_search_limit = 48;
};

/// Candidate visiting poses, one cluster per task plus the start cluster.
struct PoseClusterSet {
  std::vector<Pose> start_cluster;
  std::vector<std::vector<Pose>> clusters;
  /// Task index of each entry in `clusters`.
  std::vector<std::size_t> task_ids;
};

PoseClusterSet sample_poses(const Instance& instance, int n_pos, int n_head, double radius_factor = 0.8);

/// Generalized TSP over candidate poses. Nodes of a cluster are contiguous in
/// `nodes`; cluster 0 is the start cluster.
struct GtspCosts {
  std::vector<Pose> nodes;
  std::vector<std::size_t> cluster_of;
  std::vector<std::vector<std::size_t>> members;
  CostMatrix cost;
  std::size_t start_cluster = 0;

  std::size_t n_nodes() const { return nodes.size(); }
  std::size_t n_clusters() const { return members.size(); }
};

/// When `open_tour` is set, edges entering the start cluster are free, so the
/// cyclic tour cost equals the cost of the open path leaving the start.
GtspCosts build_gtsp(const PoseClusterSet& clusters, double rho, bool open_tour = true);

/// GTSP from an explicit cost matrix; used by tests and tools that already
/// have distances. `members` must partition 0..n-1.
GtspCosts gtsp_from_matrix(const CostMatrix& cost, std::vector<std::vector<std::size_t>> members,
                           std::size_t start_cluster = 0);

struct AtspMatrix {
  std::size_t n = 0;
  CostMatrix cost;
  std::vector<std::size_t> cluster_of;
  std::vector<std::vector<std::size_t>> members;
  double big_m = 0.0;
  std::size_t start_cluster = 0;
};

/// Noon-Bean reduction of a GTSP to an asymmetric TSP.
AtspMatrix noon_bean(const GtspCosts& gtsp);

/// Plain ATSP wrapper (every node its own cluster, no offset).
AtspMatrix atsp_from_matrix(const CostMatrix& cost);

double tour_cost(const CostMatrix& cost, const std::vector<std::size_t>& tour);

/// Local search for the ATSP: nearest-neighbour start, direction-preserving
/// segment swaps (sequential 3-opt) and Or-opt relocations, followed by
/// seeded kick-and-repair rounds. Deterministic for a given config.
std::vector<std::size_t> solve_atsp(const AtspMatrix& matrix, const SolverConfig& config = {});

struct GtspTour {
  /// One chosen node per cluster in visiting order, start cluster first.
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> clusters;
  bool repaired = false;
};

GtspTour decode_tour(const std::vector<std::size_t>& tour, const AtspMatrix& matrix);

double gtsp_tour_cost(const GtspCosts& gtsp, const std::vector<std::size_t>& nodes);

struct ExpertPath {
  std::vector<Pose> visiting_poses;
  std::vector<Pose> waypoints;
  double total_length = 0.0;
  std::vector<std::size_t> sensed_order;
  double solve_seconds = 0.0;
};

/// Samples the chain of Dubins legs at exact arc-length multiples of
/// `spacing`, plus the final pose.
std::vector<Pose> sample_chain(const std::vector<DubinsPath>& legs, double spacing);

/// Sampling-based expert: clusters, GTSP, Noon-Bean, local search, Dubins stitching.
ExpertPath plan(const Instance& instance, const SamplingConfig& sampling, const SolverConfig& solver,
                double step_dist);

/// Tasks in order of first waypoint within sensing range (ties by index);
/// tasks never sensed are omitted.
std::vector<std::size_t> sensing_order(const Instance& instance, const std::vector<Pose>& waypoints);

void save_expert_path(const ExpertPath& path, const std::filesystem::path& file);
/// The file stores length, order and waypoints; visiting poses are not persisted.
ExpertPath load_expert_path(const std::filesystem::path& file);

}  // namespace dtspn
