#include <doctest.h>

#include "dtspn/errors.hpp"
#include "dtspn/rng.hpp"
#include "oracles.hpp"

using namespace dtspn;

namespace {

Pose random_pose(SplitMix64& rng, double extent = 800.0) {
  return {rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(-kPi, kPi)};
}

}  // namespace

TEST_CASE("pose heading stays in [-pi, pi)") {
  CHECK(Pose(0, 0, kPi).theta() == doctest::Approx(-kPi));
  CHECK(Pose(0, 0, 3 * kPi + 0.5).theta() == doctest::Approx(-kPi + 0.5));
  CHECK(Pose(0, 0, -kPi).theta() == doctest::Approx(-kPi));
  SplitMix64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Pose p(0, 0, rng.uniform(-100, 100));
    CHECK(p.theta() >= -kPi);
    CHECK(p.theta() < kPi);
  }
}

TEST_CASE("identity pair has zero length") {
  const Pose p(0, 0, 0);
  CHECK(std::abs(shortest_path(p, p, 30).length()) < 1e-12);
}

TEST_CASE("aligned collinear poses give a straight path") {
  const auto path = shortest_path({0, 0, 0}, {100, 0, 0}, 30);
  CHECK(path.length() == doctest::Approx(100.0));
  CHECK(path.params[0] == 0.0);
  CHECK(path.params[2] == 0.0);
}

TEST_CASE("half turn is a left semicircle") {
  const auto path = shortest_path({0, 0, 0}, {0, 60, kPi}, 30);
  CHECK(path.length() == doctest::Approx(30 * kPi).epsilon(1e-12));
  CHECK(segment_kinds(path.word)[0] == SegmentKind::Left);
}

TEST_CASE("nonpositive radius is rejected") {
  CHECK_THROWS_AS(shortest_path({0, 0, 0}, {1, 1, 0}, 0.0), ValidationError);
  CHECK_THROWS_AS(shortest_path({0, 0, 0}, {1, 1, 0}, -3.0), ValidationError);
}

TEST_CASE("path_length of trivial paths") {
  DubinsPath zero;
  zero.rho = 30;
  CHECK(path_length(zero) == 0.0);
  DubinsPath straight{{0, 0, 0}, DubinsWord::LSL, {0.0, 100.0, 0.0}, 30.0};
  CHECK(path_length(straight) == doctest::Approx(100.0));
  DubinsPath semi{{0, 0, 0}, DubinsWord::LSL, {kPi, 0.0, 0.0}, 30.0};
  CHECK(path_length(semi) == doctest::Approx(30 * kPi));
}

TEST_CASE("shortest path matches the numerical oracle on random pairs") {
  SplitMix64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const auto path = shortest_path(a, b, 30);
    const double o = oracle::dubins_length(a, b, 30);
    CHECK(path.length() <= o + 1e-3);
    CHECK(path.length() >= o - 1e-3);
    CHECK(path.length() >= std::hypot(a.x() - b.x(), a.y() - b.y()) - 1e-9);
    const auto end = oracle::rebuild(path);
    CHECK(oracle::reaches(end, {b.x(), b.y(), b.theta()}, 1e-6));
  }
}

TEST_CASE("returned word is no longer than any other feasible word") {
  SplitMix64 rng(5);
  for (int i = 0; i < 300; ++i) {
    const Pose a = random_pose(rng, 200), b = random_pose(rng, 200);
    const double best = shortest_length(a, b, 30);
    for (auto w : kAllWords) {
      if (auto p = word_path(a, b, 30, w)) CHECK(best <= p->length() + 1e-9);
    }
  }
}

TEST_CASE("every feasible word reconstructs its endpoint") {
  SplitMix64 rng(8);
  for (int i = 0; i < 300; ++i) {
    const Pose a = random_pose(rng, 300), b = random_pose(rng, 300);
    for (auto w : kAllWords) {
      if (auto p = word_path(a, b, 30, w)) {
        for (double q : p->params) CHECK(q >= 0.0);
        CHECK(oracle::reaches(oracle::rebuild(*p), {b.x(), b.y(), b.theta()}, 1e-6));
        const Pose e = p->end();
        CHECK(std::hypot(e.x() - b.x(), e.y() - b.y()) < 1e-6);
      }
    }
  }
}

TEST_CASE("triangle property under concatenation") {
  SplitMix64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    CHECK(shortest_length(a, c, 30) <= shortest_length(a, b, 30) + shortest_length(b, c, 30) + 1e-9);
  }
}

TEST_CASE("ties resolve in declared word order") {
  // A straight path is both LSL and RSR with zero turns; LSL comes first.
  const auto path = shortest_path({0, 0, 0}, {50, 0, 0}, 30);
  CHECK(path.word == DubinsWord::LSL);
}

TEST_CASE("sample_path on trivial paths") {
  const auto zero = shortest_path({1, 2, 0.5}, {1, 2, 0.5}, 30);
  const auto one = sample_path(zero, 5.0);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == Pose(1, 2, 0.5));

  const auto straight = shortest_path({0, 0, 0}, {100, 0, 0}, 30);
  const auto s = sample_path(straight, 10.0);
  REQUIRE(s.size() == 11);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].x() == doctest::Approx(10.0 * i));
}

TEST_CASE("semicircle samples lie on the circle") {
  const auto path = shortest_path({0, 0, 0}, {0, 60, kPi}, 30);
  const auto s = sample_path(path, 5.0);
  for (const auto& p : s) CHECK(std::hypot(p.x(), p.y() - 30) == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(s.front() == path.start);
  CHECK(std::hypot(s.back().x(), s.back().y() - 60) < 1e-6);
}

TEST_CASE("sampled poses follow the kinematics exactly") {
  SplitMix64 rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto path = shortest_path(random_pose(rng, 300), random_pose(rng, 300), 30);
    const double spacing = 7.0;
    const auto s = sample_path(path, spacing);
    CHECK(s.front() == path.start);
    const Pose e = path.end();
    CHECK(std::hypot(s.back().x() - e.x(), s.back().y() - e.y()) < 1e-6);
    for (std::size_t k = 1; k < s.size(); ++k) {
      const double chord = std::hypot(s[k].x() - s[k - 1].x(), s[k].y() - s[k - 1].y());
      CHECK(chord <= spacing + 1e-9);
      // samples sit at exact multiples of the spacing
      const double sk = std::min(spacing * static_cast<double>(k), path.length());
      const Pose q = path.pose_at(sk);
      CHECK(std::hypot(q.x() - s[k].x(), q.y() - s[k].y()) < 1e-9);
    }
  }
}

TEST_CASE("heading change between samples matches the segment curvature") {
  const auto path = shortest_path({0, 0, 0}, {200, 50, -1.0}, 30);
  const double spacing = 3.0;
  const auto s = sample_path(path, spacing);
  for (std::size_t k = 1; k + 1 < s.size(); ++k) {
    const double s0 = spacing * static_cast<double>(k - 1), s1 = spacing * static_cast<double>(k);
    double expected = 0.0;
    double seg_start = 0.0;
    const auto kinds = segment_kinds(path.word);
    for (int i = 0; i < 3; ++i) {
      const double seg_end = seg_start + path.segment_length(i);
      const double overlap = std::max(0.0, std::min(s1, seg_end) - std::max(s0, seg_start));
      if (kinds[i] == SegmentKind::Left) expected += overlap / path.rho;
      if (kinds[i] == SegmentKind::Right) expected -= overlap / path.rho;
      seg_start = seg_end;
    }
    const double got = oracle::angle_diff(s[k].theta(), s[k - 1].theta());
    CHECK(std::abs(got - expected) < 1e-9);
  }
}
