#include "dtspn/dubins.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtspn/errors.hpp"

namespace dtspn {
namespace {

constexpr double kClamp = 1e-9;
constexpr double kTieTol = 1e-9;

double clamp_angle(double a) {
  if (a < kClamp || a > kTwoPi - kClamp) return 0.0;
  return a;
}

double clamp_length(double l) { return l < kClamp ? 0.0 : l; }

// Normalized problem: start at origin heading alpha, goal at (d, 0) heading
// beta, unit turning radius. Returns (t, p, q) with p already a normalized
// length for CSC words and an angle for CCC words.
struct Normalized {
  double d, alpha, beta;
  double sa, sb, ca, cb, c_ab;
};

std::optional<std::array<double, 3>> solve_word(const Normalized& n, DubinsWord word) {
  const double d = n.d, a = n.alpha, b = n.beta;
  const double sa = n.sa, sb = n.sb, ca = n.ca, cb = n.cb, c_ab = n.c_ab;
  switch (word) {
    case DubinsWord::LSL: {
      const double tmp0 = d + sa - sb;
      const double p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb);
      if (p_sq < 0.0) return std::nullopt;
      const double tmp1 = std::atan2(cb - ca, tmp0);
      return std::array{mod_two_pi(tmp1 - a), std::sqrt(p_sq), mod_two_pi(b - tmp1)};
    }
    case DubinsWord::RSR: {
      const double tmp0 = d - sa + sb;
      const double p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa);
      if (p_sq < 0.0) return std::nullopt;
      const double tmp1 = std::atan2(ca - cb, tmp0);
      return std::array{mod_two_pi(a - tmp1), std::sqrt(p_sq), mod_two_pi(tmp1 - b)};
    }
    case DubinsWord::LSR: {
      const double p_sq = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb);
      if (p_sq < 0.0) return std::nullopt;
      const double p = std::sqrt(p_sq);
      const double tmp0 = std::atan2(-ca - cb, d + sa + sb) - std::atan2(-2.0, p);
      return std::array{mod_two_pi(tmp0 - a), p, mod_two_pi(tmp0 - b)};
    }
    case DubinsWord::RSL: {
      const double p_sq = -2.0 + d * d + 2.0 * c_ab - 2.0 * d * (sa + sb);
      if (p_sq < 0.0) return std::nullopt;
      const double p = std::sqrt(p_sq);
      const double tmp0 = std::atan2(ca + cb, d - sa - sb) - std::atan2(2.0, p);
      return std::array{mod_two_pi(a - tmp0), p, mod_two_pi(b - tmp0)};
    }
    case DubinsWord::RLR: {
      const double tmp0 = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
      if (std::abs(tmp0) > 1.0) return std::nullopt;
      const double phi = std::atan2(ca - cb, d - sa + sb);
      const double p = mod_two_pi(kTwoPi - std::acos(tmp0));
      const double t = mod_two_pi(a - phi + mod_two_pi(p / 2.0));
      return std::array{t, p, mod_two_pi(a - b - t + mod_two_pi(p))};
    }
    case DubinsWord::LRL: {
      const double tmp0 = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
      if (std::abs(tmp0) > 1.0) return std::nullopt;
      const double phi = std::atan2(ca - cb, d + sa - sb);
      const double p = mod_two_pi(kTwoPi - std::acos(tmp0));
      const double t = mod_two_pi(-a - phi + p / 2.0);
      return std::array{t, p, mod_two_pi(b - a - t + mod_two_pi(p))};
    }
  }
  return std::nullopt;
}

Normalized normalize(const Pose& start, const Pose& end, double rho) {
  const double dx = end.x() - start.x();
  const double dy = end.y() - start.y();
  const double dist = std::hypot(dx, dy);
  const double theta = dist > 0.0 ? mod_two_pi(std::atan2(dy, dx)) : 0.0;
  Normalized n{};
  n.d = dist / rho;
  n.alpha = mod_two_pi(start.theta() - theta);
  n.beta = mod_two_pi(end.theta() - theta);
  n.sa = std::sin(n.alpha);
  n.sb = std::sin(n.beta);
  n.ca = std::cos(n.alpha);
  n.cb = std::cos(n.beta);
  n.c_ab = std::cos(n.alpha - n.beta);
  return n;
}

bool is_csc(DubinsWord w) { return w != DubinsWord::RLR && w != DubinsWord::LRL; }

std::optional<std::array<double, 3>> solve_params(const Normalized& n, DubinsWord word, double rho) {
  auto tpq = solve_word(n, word);
  if (!tpq) return std::nullopt;
  auto& v = *tpq;
  v[0] = clamp_angle(v[0]);
  v[2] = clamp_angle(v[2]);
  if (is_csc(word)) {
    v[1] = clamp_length(v[1] * rho);
  } else {
    v[1] = clamp_angle(v[1]);
  }
  return tpq;
}

double params_length(DubinsWord word, const std::array<double, 3>& p, double rho) {
  if (is_csc(word)) return rho * (p[0] + p[2]) + p[1];
  return rho * (p[0] + p[1] + p[2]);
}

}  // namespace

std::string_view to_string(DubinsWord w) {
  switch (w) {
    case DubinsWord::LSL: return "LSL";
    case DubinsWord::RSR: return "RSR";
    case DubinsWord::LSR: return "LSR";
    case DubinsWord::RSL: return "RSL";
    case DubinsWord::RLR: return "RLR";
    case DubinsWord::LRL: return "LRL";
  }
  return "?";
}

std::array<SegmentKind, 3> segment_kinds(DubinsWord w) {
  using enum SegmentKind;
  switch (w) {
    case DubinsWord::LSL: return {Left, Straight, Left};
    case DubinsWord::RSR: return {Right, Straight, Right};
    case DubinsWord::LSR: return {Left, Straight, Right};
    case DubinsWord::RSL: return {Right, Straight, Left};
    case DubinsWord::RLR: return {Right, Left, Right};
    case DubinsWord::LRL: return {Left, Right, Left};
  }
  return {Straight, Straight, Straight};
}

Pose advance_segment(const Pose& p, SegmentKind kind, double param, double rho) {
  const double th = p.theta();
  switch (kind) {
    case SegmentKind::Straight:
      return {p.x() + param * std::cos(th), p.y() + param * std::sin(th), th};
    case SegmentKind::Left:
      return {p.x() + rho * (std::sin(th + param) - std::sin(th)), p.y() - rho * (std::cos(th + param) - std::cos(th)),
              th + param};
    case SegmentKind::Right:
      return {p.x() - rho * (std::sin(th - param) - std::sin(th)), p.y() + rho * (std::cos(th - param) - std::cos(th)),
              th - param};
  }
  return p;
}

double DubinsPath::segment_length(int i) const {
  const auto kinds = segment_kinds(word);
  return kinds[i] == SegmentKind::Straight ? params[i] : rho * params[i];
}

double DubinsPath::length() const { return params_length(word, params, rho); }

Pose DubinsPath::pose_at(double s) const {
  const auto kinds = segment_kinds(word);
  Pose p = start;
  double remaining = std::max(0.0, s);
  for (int i = 0; i < 3; ++i) {
    const double seg = segment_length(i);
    if (remaining >= seg) {
      p = advance_segment(p, kinds[i], params[i], rho);
      remaining -= seg;
      continue;
    }
    const double param = kinds[i] == SegmentKind::Straight ? remaining : remaining / rho;
    return advance_segment(p, kinds[i], param, rho);
  }
  return p;
}

std::optional<DubinsPath> word_path(const Pose& start, const Pose& end, double rho, DubinsWord word) {
  if (!(rho > 0.0)) throw ValidationError("turning radius must be positive");
  const auto n = normalize(start, end, rho);
  auto params = solve_params(n, word, rho);
  if (!params) return std::nullopt;
  return DubinsPath{start, word, *params, rho};
}

DubinsPath shortest_path(const Pose& start, const Pose& end, double rho) {
  if (!(rho > 0.0)) throw ValidationError("turning radius must be positive");
  const auto n = normalize(start, end, rho);
  DubinsPath best{start, DubinsWord::LSL, {0.0, 0.0, 0.0}, rho};
  double best_len = std::numeric_limits<double>::infinity();
  for (DubinsWord w : kAllWords) {
    auto params = solve_params(n, w, rho);
    if (!params) continue;
    const double len = params_length(w, *params, rho);
    if (len < best_len - kTieTol) {
      best_len = len;
      best.word = w;
      best.params = *params;
    }
  }
  return best;
}

double shortest_length(const Pose& start, const Pose& end, double rho) { return shortest_path(start, end, rho).length(); }

double path_length(const DubinsPath& path) { return path.length(); }

std::vector<Pose> sample_path(const DubinsPath& path, double spacing) {
  if (!(spacing > 0.0)) throw ValidationError("sample spacing must be positive");
  const double total = path.length();
  std::vector<Pose> out;
  out.push_back(path.start);
  if (total <= 0.0) return out;
  const auto n_full = static_cast<std::size_t>(std::floor(total / spacing));
  out.reserve(n_full + 2);
  for (std::size_t i = 1; i <= n_full; ++i) {
    const double s = static_cast<double>(i) * spacing;
    if (total - s < kClamp) break;
    out.push_back(path.pose_at(s));
  }
  out.push_back(path.end());
  return out;
}

}  // namespace dtspn
