#include "dtspn/instance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "dtspn/errors.hpp"
#include "dtspn/rng.hpp"

namespace dtspn {
namespace {

constexpr const char* kHeader = "dtspn-instance v1";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, const std::string& what) {
  throw ParseError(source + ":" + std::to_string(line) + ": " + what);
}

double read_number(std::istringstream& in, const std::string& source, std::size_t line, const std::string& field) {
  std::string tok;
  if (!(in >> tok)) parse_fail(source, line, "missing field '" + field + "'");
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    parse_fail(source, line, "field '" + field + "' is not a number: '" + tok + "'");
  }
}

}  // namespace

Pose InstanceConfig::start_pose() const {
  if (start) return *start;
  return {map_width / 2.0, map_height / 20.0, 0.0};
}

void InstanceConfig::validate() const {
  if (!(map_width > 0.0) || !(map_height > 0.0)) throw ValidationError("map dimensions must be positive");
  if (!(r_sense > 0.0)) throw ValidationError("sensing radius must be positive");
  if (!(turn_radius > 0.0)) throw ValidationError("turning radius must be positive");
}

InstanceConfig Instance::config() const { return {map_width, map_height, r_sense, turn_radius, start}; }

void Instance::validate() const {
  config().validate();
  if (tasks.empty()) throw ValidationError("instance has no tasks");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    if (!(t.x >= 0.0 && t.x <= map_width && t.y >= 0.0 && t.y <= map_height)) {
      throw ValidationError("task " + std::to_string(i) + " at (" + fmt_double(t.x) + ", " + fmt_double(t.y) +
                            ") lies outside the map");
    }
  }
}

Instance generate(std::size_t n_tasks, std::uint64_t seed, const InstanceConfig& config) {
  if (n_tasks == 0) throw ValidationError("n_tasks must be at least 1");
  config.validate();
  Instance inst;
  inst.map_width = config.map_width;
  inst.map_height = config.map_height;
  inst.r_sense = config.r_sense;
  inst.turn_radius = config.turn_radius;
  inst.start = config.start_pose();
  inst.seed = seed;
  SplitMix64 rng(SplitMix64::mix(seed ^ 0xD75D5C0FFEEULL));
  inst.tasks.reserve(n_tasks);
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const double x = rng.uniform(0.0, config.map_width);
    const double y = rng.uniform(0.0, config.map_height);
    inst.tasks.push_back({x, y});
  }
  return inst;
}

std::string format_instance(const Instance& inst) {
  std::ostringstream out;
  out << kHeader << '\n';
  out << "map " << fmt_double(inst.map_width) << ' ' << fmt_double(inst.map_height) << '\n';
  out << "sense " << fmt_double(inst.r_sense) << '\n';
  out << "turn " << fmt_double(inst.turn_radius) << '\n';
  out << "start " << fmt_double(inst.start.x()) << ' ' << fmt_double(inst.start.y()) << ' '
      << fmt_double(inst.start.theta()) << '\n';
  out << "seed " << inst.seed << '\n';
  for (const auto& t : inst.tasks) out << "task " << fmt_double(t.x) << ' ' << fmt_double(t.y) << '\n';
  return out.str();
}

Instance parse_instance(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) parse_fail(source, 1, "missing header '" + std::string(kHeader) + "'");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) parse_fail(source, lineno, "expected header '" + std::string(kHeader) + "', found '" + line + "'");

  Instance inst;
  bool have_map = false, have_sense = false, have_turn = false, have_start = false, have_seed = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "map") {
      inst.map_width = read_number(ls, source, lineno, "map.width");
      inst.map_height = read_number(ls, source, lineno, "map.height");
      have_map = true;
    } else if (key == "sense") {
      inst.r_sense = read_number(ls, source, lineno, "sense");
      have_sense = true;
    } else if (key == "turn") {
      inst.turn_radius = read_number(ls, source, lineno, "turn");
      have_turn = true;
    } else if (key == "start") {
      const double x = read_number(ls, source, lineno, "start.x");
      const double y = read_number(ls, source, lineno, "start.y");
      const double th = read_number(ls, source, lineno, "start.theta");
      inst.start = Pose(x, y, th);
      have_start = true;
    } else if (key == "seed") {
      std::string tok;
      if (!(ls >> tok)) parse_fail(source, lineno, "missing field 'seed'");
      try {
        inst.seed = std::stoull(tok);
      } catch (const std::exception&) {
        parse_fail(source, lineno, "field 'seed' is not an unsigned integer: '" + tok + "'");
      }
      have_seed = true;
    } else if (key == "task") {
      const double x = read_number(ls, source, lineno, "task.x");
      const double y = read_number(ls, source, lineno, "task.y");
      inst.tasks.push_back({x, y});
    } else {
      parse_fail(source, lineno, "unknown key '" + key + "'");
    }
  }
  const std::size_t end_line = lineno + 1;
  if (!have_map) parse_fail(source, end_line, "missing field 'map'");
  if (!have_sense) parse_fail(source, end_line, "missing field 'sense'");
  if (!have_turn) parse_fail(source, end_line, "missing field 'turn'");
  if (!have_start) parse_fail(source, end_line, "missing field 'start'");
  if (!have_seed) parse_fail(source, end_line, "missing field 'seed'");
  if (inst.tasks.empty()) parse_fail(source, end_line, "missing field 'task'");
  inst.validate();
  return inst;
}

void save_instance(const Instance& instance, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << format_instance(instance);
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Instance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open instance file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_instance(buf.str(), path.string());
}

}  // namespace dtspn
