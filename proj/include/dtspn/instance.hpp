#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dtspn/pose.hpp"

namespace dtspn {

/// Map and sensor parameters shared by every generated instance.
struct InstanceConfig {
  double map_width = 800.0;
  double map_height = 800.0;
  double r_sense = 58.0;
  double turn_radius = 30.0;
  /// Defaults to (width / 2, height / 20, 0) when unset.
  std::optional<Pose> start;

  Pose start_pose() const;
  void validate() const;
};

struct Instance {
  double map_width = 800.0;
  double map_height = 800.0;
  std::vector<Point> tasks;
  double r_sense = 58.0;
  double turn_radius = 30.0;
  Pose start;
  std::uint64_t seed = 0;

  std::size_t n_tasks() const { return tasks.size(); }
  InstanceConfig config() const;

  /// Throws ValidationError when an invariant is violated.
  void validate() const;

  friend bool operator==(const Instance&, const Instance&) = default;
};

/// Uniform i.i.d. task placement over the map, a pure function of its arguments.
Instance generate(std::size_t n_tasks, std::uint64_t seed, const InstanceConfig& config = {});

void save_instance(const Instance& instance, const std::filesystem::path& path);
Instance load_instance(const std::filesystem::path& path);

/// Text form used by the file format; exposed for in-memory round-trips.
std::string format_instance(const Instance& instance);
Instance parse_instance(const std::string& text, const std::string& source = "<memory>");

}  // namespace dtspn
