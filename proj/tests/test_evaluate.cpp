#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "dtspn/errors.hpp"
#include "dtspn/evaluate.hpp"

using namespace dtspn;

namespace {

std::vector<Episode> episodes(std::size_t n, std::uint64_t first = 500) {
  InstanceConfig ic;
  ic.map_width = 300;
  ic.map_height = 300;
  const auto factory = make_episode_factory(3, ic, {3, 2, 0.8}, {}, {});
  std::vector<Episode> out;
  for (std::uint64_t s = first; out.size() < n; ++s) out.push_back(factory(s));
  return out;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dtspn_test_eval_" + name);
}

EpisodeRecord record_with(std::vector<int> sensed_at, std::vector<double> imitation, std::vector<double> goal) {
  EpisodeRecord r;
  r.sensed_at = std::move(sensed_at);
  r.r_imitation = std::move(imitation);
  r.r_goal = std::move(goal);
  r.actions.assign(r.r_goal.size(), 3);
  return r;
}

}  // namespace

TEST_CASE("median") {
  CHECK(median({}) == 0.0);
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("summary statistics") {
  auto a = record_with({1, 2}, {0, -0.5}, {5.1, 10});
  a.seconds = 2.0;
  auto b = record_with({1, -1, -1, -1}, {-1}, {5.1});
  b.seconds = 9.0;
  const auto m = summarize({a, b}, 0.5);
  CHECK(m.episodes == 2);
  CHECK(m.successes == 1);
  CHECK(m.sensing_rate == doctest::Approx((1.0 + 0.25) / 2));
  CHECK(m.avg_reward == doctest::Approx((14.6 + 4.1) / 2));
  CHECK(m.avg_return == doctest::Approx((5.1 + 0.5 * 9.5 + 4.1) / 2));
  REQUIRE(m.mean_time);
  CHECK(*m.mean_time == 2.0);
  CHECK(*m.median_time == 2.0);
  const auto none = summarize({b}, 0.5);
  CHECK_FALSE(none.mean_time);
}

TEST_CASE("expert replay senses every task") {
  const auto eps = episodes(10);
  const auto r = evaluate_expert(eps, {});
  CHECK(r.metrics.sensing_rate == 1.0);
  CHECK(r.metrics.successes == 10);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(r.records[i].seconds >= eps[i].expert.solve_seconds);
    CHECK(r.records[i].poses.size() == r.records[i].steps() + 1);
    CHECK(r.records[i].done.back());
  }
}

TEST_CASE("bundle evaluation is deterministic and checks shapes") {
  const auto eps = episodes(4);
  const auto b = ModelBundle::create(BundleDims::for_tasks(3), 1);
  EvalConfig cfg;
  const auto r1 = evaluate(b, eps, cfg);
  const auto r2 = evaluate(b, eps, cfg);
  REQUIRE(r1.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r1.records[i].actions == r2.records[i].actions);
  cfg.pi_eval = true;
  CHECK(evaluate(b, eps, cfg).records.size() == 4);
  const auto wrong = ModelBundle::create(BundleDims::for_tasks(5), 1);
  CHECK_THROWS_AS(evaluate(wrong, eps, cfg), ShapeError);
  CHECK_THROWS_AS(evaluate(b, {}, cfg), ValidationError);
}

TEST_CASE("malformed bundles are rejected") {
  auto b = ModelBundle::create(BundleDims::for_tasks(3), 2);
  b.adaptation = b.encoder;
  const auto eps = episodes(1);
  CHECK_THROWS(evaluate(b, eps, {}));
}

TEST_CASE("evaluation records sensing times consistently") {
  const auto eps = episodes(3);
  const auto r = evaluate_expert(eps, {});
  for (const auto& rec : r.records) {
    int newly = 0;
    for (int n : rec.newly_sensed) newly += n;
    const auto at_start = std::count(rec.sensed_at.begin(), rec.sensed_at.end(), 0);
    CHECK(newly + at_start == 3);
    for (int t : rec.sensed_at) {
      if (t > 0) CHECK(rec.newly_sensed[static_cast<std::size_t>(t - 1)] > 0);
    }
  }
}

TEST_CASE("speed benchmark requires enough instances") {
  const auto b = ModelBundle::create(BundleDims::for_tasks(3), 1);
  std::vector<Instance> few;
  for (const auto& e : episodes(3)) few.push_back(e.instance);
  CHECK_THROWS_AS(benchmark_speed(few, b, {3, 2, 0.8}, {}, {}), ValidationError);
  std::vector<Instance> ten;
  for (const auto& e : episodes(10)) ten.push_back(e.instance);
  const auto rep = benchmark_speed(ten, b, {3, 2, 0.8}, {}, {});
  CHECK(rep.instances == 10);
  CHECK(rep.median_expert_seconds > 0.0);
  CHECK(rep.median_policy_seconds > 0.0);
  CHECK(rep.ratio == doctest::Approx(rep.median_expert_seconds / rep.median_policy_seconds));
}

TEST_CASE("episode CSV round trip") {
  const auto eps = episodes(1);
  const auto rec = evaluate_expert(eps, {}).records.front();
  const auto path = temp_file("ep.csv");
  write_episode_csv(rec, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,x,y,theta,action,r_imitation,r_goal,newly_sensed,done");
  in.close();
  const auto back = read_episode_csv(path);
  CHECK(back.actions == rec.actions);
  CHECK(back.r_imitation == rec.r_imitation);
  CHECK(back.r_goal == rec.r_goal);
  CHECK(back.newly_sensed == rec.newly_sensed);
  CHECK(back.done == rec.done);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_episode_csv(path), ValidationError);

  {
    std::ofstream bad(path);
    bad << "t,x,y,theta,action,r_imitation,r_goal,newly_sensed,done\n1,2,3\n";
  }
  CHECK_THROWS_AS(read_episode_csv(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("trajectory plot contains every layer") {
  const auto eps = episodes(1);
  const auto rec = evaluate_expert(eps, {}).records.front();
  const auto svg = render_trajectory_svg(rec, eps[0].instance, &eps[0].expert);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("class=\"expert\"") != std::string::npos);
  CHECK(svg.find("class=\"agent\"") != std::string::npos);
  CHECK(svg.find("class=\"legend\"") != std::string::npos);
  std::size_t tasks = 0, sensing = 0;
  for (std::size_t p = svg.find("class=\"task\""); p != std::string::npos; p = svg.find("class=\"task\"", p + 1)) ++tasks;
  for (std::size_t p = svg.find("class=\"sensing\""); p != std::string::npos; p = svg.find("class=\"sensing\"", p + 1))
    ++sensing;
  CHECK(tasks == 3);
  CHECK(sensing == 3);
  CHECK(svg == render_trajectory_svg(rec, eps[0].instance, &eps[0].expert));
  const auto bare = render_trajectory_svg(rec, eps[0].instance, nullptr);
  CHECK(bare.find("class=\"expert\"") == std::string::npos);
}
