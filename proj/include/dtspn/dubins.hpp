#pragma once

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "dtspn/pose.hpp"

namespace dtspn {

/// The six Dubins words, in tie-break order.
enum class DubinsWord { LSL, RSR, LSR, RSL, RLR, LRL };

inline constexpr std::array<DubinsWord, 6> kAllWords = {DubinsWord::LSL, DubinsWord::RSR, DubinsWord::LSR,
                                                         DubinsWord::RSL, DubinsWord::RLR, DubinsWord::LRL};

std::string_view to_string(DubinsWord w);

enum class SegmentKind { Left, Straight, Right };

/// Segment kinds of each word, in traversal order.
std::array<SegmentKind, 3> segment_kinds(DubinsWord w);

/// A curvature-bounded path made of three segments. Curve parameters are
/// turn angles in radians, the straight parameter is a length in meters.
struct DubinsPath {
  Pose start;
  DubinsWord word = DubinsWord::LSL;
  std::array<double, 3> params{0.0, 0.0, 0.0};
  double rho = 1.0;

  double length() const;
  Pose end() const { return pose_at(length()); }

  /// Pose after travelling arc length s from the start (clamped to [0, length]).
  Pose pose_at(double s) const;

  /// Length in meters of segment i.
  double segment_length(int i) const;
};

/// Candidate path for one word, if the word is feasible for this pose pair.
std::optional<DubinsPath> word_path(const Pose& start, const Pose& end, double rho, DubinsWord word);

/// Minimum-length path among all feasible words. Throws ValidationError when rho <= 0.
DubinsPath shortest_path(const Pose& start, const Pose& end, double rho);

/// Length of shortest_path without materializing the path.
double shortest_length(const Pose& start, const Pose& end, double rho);

double path_length(const DubinsPath& path);

/// Poses along the path, first = start, last = end, consecutive arc-length gap
/// <= spacing. Samples are taken at s = 0, spacing, 2*spacing, ... and the end.
std::vector<Pose> sample_path(const DubinsPath& path, double spacing);

/// Advances a pose along a single segment kind by parameter p
/// (angle for curves, length for straight).
Pose advance_segment(const Pose& p, SegmentKind kind, double param, double rho);

}  // namespace dtspn
