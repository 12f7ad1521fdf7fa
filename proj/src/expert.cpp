#include "dtspn/expert.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dtspn/errors.hpp"
#include "dtspn/rng.hpp"

namespace dtspn {

PoseClusterSet sample_poses(const Instance& instance, int n_pos, int n_head, double radius_factor) {
  if (n_pos < 1 || n_head < 1) throw ValidationError("n_pos and n_head must be at least 1");
  PoseClusterSet set;
  const double radius = radius_factor * instance.r_sense;
  for (int h = 0; h < n_head; ++h) {
    set.start_cluster.push_back(instance.start.with_theta(instance.start.theta() + kTwoPi * h / n_head));
  }
  for (std::size_t t = 0; t < instance.tasks.size(); ++t) {
    const auto& task = instance.tasks[t];
    std::vector<Pose> cluster;
    cluster.reserve(static_cast<std::size_t>(n_pos * n_head));
    for (int p = 0; p < n_pos; ++p) {
      const double phi = kTwoPi * p / n_pos;
      const double x = task.x + radius * std::cos(phi);
      const double y = task.y + radius * std::sin(phi);
      for (int h = 0; h < n_head; ++h) cluster.emplace_back(x, y, kTwoPi * h / n_head);
    }
    set.clusters.push_back(std::move(cluster));
    set.task_ids.push_back(t);
  }
  return set;
}

GtspCosts build_gtsp(const PoseClusterSet& clusters, double rho, bool open_tour) {
  if (clusters.start_cluster.empty()) throw ValidationError("start cluster is empty");
  GtspCosts g;
  auto add_cluster = [&](const std::vector<Pose>& poses) {
    if (poses.empty()) throw ValidationError("empty pose cluster");
    std::vector<std::size_t> ids;
    for (const auto& p : poses) {
      ids.push_back(g.nodes.size());
      g.cluster_of.push_back(g.members.size());
      g.nodes.push_back(p);
    }
    g.members.push_back(std::move(ids));
  };
  add_cluster(clusters.start_cluster);
  for (const auto& c : clusters.clusters) add_cluster(c);
  g.start_cluster = 0;

  const std::size_t n = g.nodes.size();
  g.cost = CostMatrix(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (g.cluster_of[i] == g.cluster_of[j]) continue;
      if (open_tour && g.cluster_of[j] == g.start_cluster) {
        g.cost(i, j) = 0.0;
      } else {
        g.cost(i, j) = shortest_length(g.nodes[i], g.nodes[j], rho);
      }
    }
  }
  return g;
}

GtspCosts gtsp_from_matrix(const CostMatrix& cost, std::vector<std::vector<std::size_t>> members,
                           std::size_t start_cluster) {
  GtspCosts g;
  const std::size_t n = cost.size();
  g.cluster_of.assign(n, members.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) throw ValidationError("empty cluster " + std::to_string(c));
    for (auto v : members[c]) {
      if (v >= n || g.cluster_of[v] != members.size()) throw ValidationError("clusters must partition the nodes");
      g.cluster_of[v] = c;
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (g.cluster_of[v] == members.size()) throw ValidationError("node " + std::to_string(v) + " has no cluster");
  }
  g.members = std::move(members);
  g.start_cluster = start_cluster;
  g.nodes.assign(n, Pose{});
  g.cost = CostMatrix(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (g.cluster_of[i] != g.cluster_of[j]) g.cost(i, j) = cost(i, j);
  return g;
}

AtspMatrix noon_bean(const GtspCosts& gtsp) {
  const std::size_t n = gtsp.n_nodes();
  AtspMatrix a;
  a.n = n;
  a.cluster_of = gtsp.cluster_of;
  a.members = gtsp.members;
  a.start_cluster = gtsp.start_cluster;
  a.cost = CostMatrix(n);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (gtsp.cluster_of[i] != gtsp.cluster_of[j] && std::isfinite(gtsp.cost(i, j))) total += gtsp.cost(i, j);
  a.big_m = total + 1.0;

  std::vector<std::size_t> pred(n);
  for (const auto& m : gtsp.members) {
    if (m.empty()) throw ValidationError("noon_bean: empty cluster");
    const std::size_t k = m.size();
    for (std::size_t i = 0; i < k; ++i) {
      pred[m[i]] = m[(i + k - 1) % k];
      if (k > 1) a.cost(m[i], m[(i + 1) % k]) = 0.0;
    }
  }
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (gtsp.cluster_of[u] == gtsp.cluster_of[v]) continue;
      const double c = gtsp.cost(u, v);
      if (std::isfinite(c)) a.cost(pred[u], v) = c + a.big_m;
    }
  }
  return a;
}

AtspMatrix atsp_from_matrix(const CostMatrix& cost) {
  AtspMatrix a;
  a.n = cost.size();
  a.cost = cost;
  for (std::size_t i = 0; i < a.n; ++i) {
    a.cost(i, i) = kForbidden;
    a.cluster_of.push_back(i);
    a.members.push_back({i});
  }
  return a;
}

double tour_cost(const CostMatrix& cost, const std::vector<std::size_t>& tour) {
  double total = 0.0;
  for (std::size_t i = 0; i < tour.size(); ++i) total += cost(tour[i], tour[(i + 1) % tour.size()]);
  return total;
}

namespace {

class LocalSearch {
 public:
  LocalSearch(const CostMatrix& cost, const SolverConfig& config, double scale)
      : c_(cost), n_(cost.size()), full_(static_cast<int>(n_) <= config.full_search_limit) {
    tol_ = 1e-9 + 1e-13 * scale;
    if (!full_) {
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(config.neighbors, 1)), n_ - 1);
      nbrs_.resize(n_);
      std::vector<std::size_t> order(n_);
      for (std::size_t a = 0; a < n_; ++a) {
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1), order.end(),
                          [&](std::size_t x, std::size_t y) {
                            const double cx = x == a ? kForbidden : c_(a, x);
                            const double cy = y == a ? kForbidden : c_(a, y);
                            return cx < cy || (cx == cy && x < y);
                          });
        for (std::size_t i = 0; i < k + 1 && nbrs_[a].size() < k; ++i) {
          if (order[i] != a && std::isfinite(c_(a, order[i]))) nbrs_[a].push_back(order[i]);
        }
      }
    }
    pos_.resize(n_);
  }

  void set_tour(std::vector<std::size_t> t) {
    tour_ = std::move(t);
    for (std::size_t i = 0; i < n_; ++i) pos_[tour_[i]] = i;
  }
  const std::vector<std::size_t>& tour() const { return tour_; }

  /// Runs first-improvement sweeps until no move improves or the cap is hit.
  void optimize(std::size_t move_cap) {
    if (n_ < 3) return;
    std::size_t moves = 0;
    bool improved = true;
    while (improved && moves < move_cap) {
      improved = false;
      for (std::size_t a = 0; a < n_ && moves < move_cap; ++a) {
        if (try_segment_swap(a) || try_or_opt(a)) {
          ++moves;
          improved = true;
        }
      }
    }
  }

 private:
  std::size_t at(std::size_t p) const { return tour_[p % n_]; }

  // Cut after a (a->b), before d (c->d) and after e (e->f); reconnect as
  // a->d..e->b..c->f. Every segment keeps its direction.
  bool try_segment_swap(std::size_t a) {
    const std::size_t pa = pos_[a];
    const std::size_t b = at(pa + 1);
    const double cab = c_(a, b);
    auto scan = [&](std::size_t d) {
      const std::size_t rd = (pos_[d] + n_ - pa) % n_;
      if (rd < 2) return false;
      const double g1 = cab - c_(a, d);
      if (!full_ && !(g1 > 0.0)) return false;
      const std::size_t cn = at(pa + rd - 1);
      const double base = g1 + c_(cn, d);
      for (std::size_t re = rd; re < n_; ++re) {
        const std::size_t e = at(pa + re);
        const std::size_t f = at(pa + re + 1);
        const double gain = base + c_(e, f) - c_(cn, f) - c_(e, b);
        if (gain > tol_) {
          apply_swap(pa, rd, re);
          return true;
        }
      }
      return false;
    };
    if (full_) {
      for (std::size_t d = 0; d < n_; ++d)
        if (d != a && scan(d)) return true;
    } else {
      for (std::size_t d : nbrs_[a])
        if (scan(d)) return true;
    }
    return false;
  }

  void apply_swap(std::size_t pa, std::size_t rd, std::size_t re) {
    std::vector<std::size_t> next;
    next.reserve(n_);
    next.push_back(at(pa));
    for (std::size_t k = rd; k <= re; ++k) next.push_back(at(pa + k));
    for (std::size_t k = 1; k < rd; ++k) next.push_back(at(pa + k));
    for (std::size_t k = re + 1; k < n_; ++k) next.push_back(at(pa + k));
    set_tour(std::move(next));
  }

  // Moves the segment of 1..3 nodes starting at s between two other
  // consecutive nodes, preserving its direction.
  bool try_or_opt(std::size_t s) {
    const std::size_t ps = pos_[s];
    for (std::size_t len = 1; len <= 3 && len + 2 <= n_; ++len) {
      const std::size_t prev = at(ps + n_ - 1);
      const std::size_t last = at(ps + len - 1);
      const std::size_t next = at(ps + len);
      const double removal = c_(prev, s) + c_(last, next) - c_(prev, next);
      // insertion edges (x, y) with x at relative offset len .. n-2 from s
      for (std::size_t off = len; off + 1 < n_; ++off) {
        const std::size_t x = at(ps + off);
        const std::size_t y = at(ps + off + 1);
        const double gain = removal + c_(x, y) - c_(x, s) - c_(last, y);
        if (gain > tol_) {
          std::vector<std::size_t> next_tour;
          next_tour.reserve(n_);
          for (std::size_t k = len; k <= off; ++k) next_tour.push_back(at(ps + k));
          for (std::size_t k = 0; k < len; ++k) next_tour.push_back(at(ps + k));
          for (std::size_t k = off + 1; k < n_; ++k) next_tour.push_back(at(ps + k));
          set_tour(std::move(next_tour));
          return true;
        }
      }
    }
    return false;
  }

  const CostMatrix& c_;
  std::size_t n_;
  bool full_;
  double tol_ = 1e-9;
  std::vector<std::vector<std::size_t>> nbrs_;
  std::vector<std::size_t> tour_;
  std::vector<std::size_t> pos_;
};

std::vector<std::size_t> nearest_neighbor_tour(const CostMatrix& c, std::size_t start) {
  const std::size_t n = c.size();
  std::vector<bool> used(n, false);
  std::vector<std::size_t> tour{start};
  used[start] = true;
  std::size_t cur = start;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t best = n;
    double best_cost = kForbidden;
    for (std::size_t j = 0; j < n; ++j) {
      if (used[j]) continue;
      if (best == n || c(cur, j) < best_cost) {
        best = j;
        best_cost = c(cur, j);
      }
    }
    used[best] = true;
    tour.push_back(best);
    cur = best;
  }
  return tour;
}

std::vector<std::size_t> kick(const std::vector<std::size_t>& t, SplitMix64& rng) {
  const std::size_t n = t.size();
  std::size_t cuts[3];
  do {
    for (auto& c : cuts) c = 1 + rng.below(n - 1);
    std::sort(std::begin(cuts), std::end(cuts));
  } while (cuts[0] == cuts[1] || cuts[1] == cuts[2]);
  std::vector<std::size_t> out(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(cuts[0]));
  out.insert(out.end(), t.begin() + static_cast<std::ptrdiff_t>(cuts[1]), t.begin() + static_cast<std::ptrdiff_t>(cuts[2]));
  out.insert(out.end(), t.begin() + static_cast<std::ptrdiff_t>(cuts[0]), t.begin() + static_cast<std::ptrdiff_t>(cuts[1]));
  out.insert(out.end(), t.begin() + static_cast<std::ptrdiff_t>(cuts[2]), t.end());
  return out;
}

}  // namespace

std::vector<std::size_t> solve_atsp(const AtspMatrix& matrix, const SolverConfig& config) {
  const std::size_t n = matrix.cost.size();
  if (n == 0) return {};
  std::size_t start = 0;
  if (matrix.start_cluster < matrix.members.size() && !matrix.members[matrix.start_cluster].empty()) {
    start = matrix.members[matrix.start_cluster].front();
  }
  auto tour = nearest_neighbor_tour(matrix.cost, start);
  if (n < 3) return tour;

  const std::size_t cap = static_cast<std::size_t>(std::max(config.move_cap_factor, 1)) * n;
  const double scale = std::max(1.0, matrix.big_m * static_cast<double>(matrix.members.size()));
  LocalSearch ls(matrix.cost, config, scale);
  ls.set_tour(std::move(tour));
  ls.optimize(cap);
  auto best = ls.tour();
  double best_cost = tour_cost(matrix.cost, best);

  int kicks = config.kicks;
  const bool full = n <= static_cast<std::size_t>(std::max(config.full_search_limit, 0));
  if (kicks > 0 && full) kicks = std::max(kicks, 10 * static_cast<int>(n));
  if (n >= 4 && kicks > 0) {
    SplitMix64 rng(SplitMix64::mix(config.seed ^ 0xA75F00D5ULL));
    const double tol = 1e-9 + 1e-13 * scale;
    for (int k = 0; k < kicks; ++k) {
      if (full && k % 2 == 1) {
        auto shuffled = best;
        for (std::size_t i = n - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
        ls.set_tour(std::move(shuffled));
      } else {
        ls.set_tour(kick(best, rng));
      }
      ls.optimize(cap);
      const double cost = tour_cost(matrix.cost, ls.tour());
      if (cost < best_cost - tol) {
        best = ls.tour();
        best_cost = cost;
      }
    }
  }
  return best;
}

GtspTour decode_tour(const std::vector<std::size_t>& tour, const AtspMatrix& matrix) {
  const std::size_t n = matrix.n;
  if (tour.size() != n) throw std::logic_error("decode_tour: tour length does not match the matrix");
  std::vector<bool> seen(n, false);
  for (auto v : tour) {
    if (v >= n || seen[v]) throw std::logic_error("decode_tour: tour is not a permutation");
    seen[v] = true;
  }
  const std::size_t k = matrix.members.size();
  const auto& cl = matrix.cluster_of;

  // rotate to the first node of a start-cluster block
  std::size_t origin = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (cl[tour[i]] == matrix.start_cluster && cl[tour[(i + n - 1) % n]] != matrix.start_cluster) {
      origin = i;
      break;
    }
  }
  if (origin == n) {
    // the whole tour sits in the start cluster
    if (k != 1) throw std::logic_error("decode_tour: could not locate the start cluster block");
    origin = 0;
  }

  GtspTour out;
  std::vector<std::size_t> blocks(k, 0);
  std::vector<bool> placed(k, false);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t v = tour[(origin + i) % n];
    const std::size_t prev = tour[(origin + i + n - 1) % n];
    const std::size_t c = cl[v];
    const bool block_start = i == 0 || cl[prev] != c;
    if (!block_start) continue;
    ++blocks[c];
    if (!placed[c]) {
      placed[c] = true;
      out.nodes.push_back(v);
      out.clusters.push_back(c);
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!placed[c]) throw std::logic_error("decode_tour: cluster " + std::to_string(c) + " missing from tour");
    if (blocks[c] > 1) out.repaired = true;
  }
  return out;
}

double gtsp_tour_cost(const GtspCosts& gtsp, const std::vector<std::size_t>& nodes) {
  double total = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) total += gtsp.cost(nodes[i], nodes[(i + 1) % nodes.size()]);
  return total;
}

std::vector<Pose> sample_chain(const std::vector<DubinsPath>& legs, double spacing) {
  if (!(spacing > 0.0)) throw ValidationError("waypoint spacing must be positive");
  if (legs.empty()) return {};
  std::vector<double> cum{0.0};
  for (const auto& l : legs) cum.push_back(cum.back() + l.length());
  const double total = cum.back();
  std::vector<Pose> out{legs.front().start};
  std::size_t leg = 0;
  for (std::size_t k = 1;; ++k) {
    const double s = static_cast<double>(k) * spacing;
    if (s > total - 1e-9) break;
    while (leg + 1 < legs.size() && s > cum[leg + 1]) ++leg;
    out.push_back(legs[leg].pose_at(s - cum[leg]));
  }
  if (total > 0.0) out.push_back(legs.back().end());
  return out;
}

std::vector<std::size_t> sensing_order(const Instance& instance, const std::vector<Pose>& waypoints) {
  const std::size_t n = instance.tasks.size();
  std::vector<std::size_t> first(n, waypoints.size());
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t w = 0; w < waypoints.size(); ++w) {
      if (waypoints[w].distance_to(instance.tasks[t].x, instance.tasks[t].y) <= instance.r_sense) {
        first[t] = w;
        break;
      }
    }
  }
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < n; ++t)
    if (first[t] < waypoints.size()) order.push_back(t);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return first[a] < first[b]; });
  return order;
}

ExpertPath plan(const Instance& instance, const SamplingConfig& sampling, const SolverConfig& solver, double step_dist) {
  instance.validate();
  const auto t0 = std::chrono::steady_clock::now();

  Instance pending = instance;
  pending.tasks.clear();
  std::vector<std::size_t> pending_ids;
  for (std::size_t t = 0; t < instance.tasks.size(); ++t) {
    if (instance.start.distance_to(instance.tasks[t].x, instance.tasks[t].y) > instance.r_sense) {
      pending.tasks.push_back(instance.tasks[t]);
      pending_ids.push_back(t);
    }
  }

  ExpertPath path;
  if (pending.tasks.empty()) {
    path.visiting_poses = {instance.start};
    path.waypoints = {instance.start};
  } else {
    auto clusters = sample_poses(pending, sampling.n_pos, sampling.n_head, sampling.radius_factor);
    const auto gtsp = build_gtsp(clusters, instance.turn_radius, true);
    const auto atsp = noon_bean(gtsp);
    const auto tour = solve_atsp(atsp, solver);
    const auto decoded = decode_tour(tour, atsp);

    std::vector<DubinsPath> legs;
    for (std::size_t i = 0; i < decoded.nodes.size(); ++i) {
      path.visiting_poses.push_back(gtsp.nodes[decoded.nodes[i]]);
      if (i > 0) {
        legs.push_back(shortest_path(path.visiting_poses[i - 1], path.visiting_poses[i], instance.turn_radius));
        path.total_length += legs.back().length();
      }
    }
    path.waypoints = sample_chain(legs, step_dist);
  }

  path.sensed_order = sensing_order(instance, path.waypoints);
  if (path.sensed_order.size() != instance.tasks.size()) {
    throw SensingGap("expert path misses " + std::to_string(instance.tasks.size() - path.sensed_order.size()) +
                     " task(s) on instance seed " + std::to_string(instance.seed));
  }
  path.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return path;
}

namespace {
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void save_expert_path(const ExpertPath& path, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot open '" + file.string() + "' for writing");
  out << "dtspn-expert v1\n";
  out << "length " << fmt17(path.total_length) << '\n';
  out << "order";
  for (auto t : path.sensed_order) out << ' ' << t;
  out << '\n';
  for (const auto& w : path.waypoints) out << "wp " << fmt17(w.x()) << ' ' << fmt17(w.y()) << ' ' << fmt17(w.theta()) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + file.string() + "'");
}

ExpertPath load_expert_path(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open expert path file '" + file.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "dtspn-expert v1") {
    throw ParseError(file.string() + ":1: expected header 'dtspn-expert v1'");
  }
  ExpertPath path;
  bool have_length = false, have_order = false;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "length") {
      if (!(ls >> path.total_length)) fail("missing field 'length'");
      have_length = true;
    } else if (key == "order") {
      std::size_t t;
      while (ls >> t) path.sensed_order.push_back(t);
      have_order = true;
    } else if (key == "wp") {
      double x, y, th;
      if (!(ls >> x)) fail("missing field 'wp.x'");
      if (!(ls >> y)) fail("missing field 'wp.y'");
      if (!(ls >> th)) fail("missing field 'wp.theta'");
      path.waypoints.emplace_back(x, y, th);
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  ++lineno;
  if (!have_length) fail("missing field 'length'");
  if (!have_order) fail("missing field 'order'");
  if (path.waypoints.empty()) fail("missing field 'wp'");
  return path;
}

}  // namespace dtspn
