#pragma once

#include <cmath>
#include <numbers>

namespace dtspn {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into [-pi, pi).
inline double normalize_angle(double a) {
  double r = std::fmod(a + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  r -= kPi;
  // fmod can land exactly on the upper bound after the shift
  if (r >= kPi) r -= kTwoPi;
  return r;
}

/// Wraps an angle into [0, 2pi).
inline double mod_two_pi(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r -= kTwoPi;
  return r;
}

/// Planar configuration (x, y, heading). The heading is kept in [-pi, pi).
class Pose {
 public:
  Pose() = default;
  Pose(double x, double y, double theta) : x_(x), y_(y), theta_(normalize_angle(theta)) {}

  double x() const { return x_; }
  double y() const { return y_; }
  double theta() const { return theta_; }

  Pose with_theta(double theta) const { return {x_, y_, theta}; }

  double distance_to(const Pose& o) const { return std::hypot(o.x_ - x_, o.y_ - y_); }
  double distance_to(double px, double py) const { return std::hypot(px - x_, py - y_); }

  friend bool operator==(const Pose&, const Pose&) = default;

 private:
  double x_ = 0.0;
  double y_ = 0.0;
  double theta_ = 0.0;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

}  // namespace dtspn
