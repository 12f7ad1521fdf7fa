#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "dtspn_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run(const std::string& args) {
  const auto out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = std::string(DTSPN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

json summary(const Run& r) {
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return json::parse(r.out);
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

std::string desk() {
  static const std::string file = [] {
    const auto p = path("desk.json");
    std::ofstream(p) << R"({"tasks": 3, "map": [300, 300], "sampling": {"n_pos": 3, "n_head": 2},
      "train": {"rollout_steps": 512, "n_envs": 4, "minibatch": 128, "epochs_per_batch": 2,
                "checkpoint_episodes": 2, "checkpoint_every": 1, "bc_batch": 128}})";
    return p;
  }();
  return " --config " + file;
}

}  // namespace

TEST_CASE("full pipeline runs end to end") {
  auto g = summary(run("gen" + desk() + " --seed 5 --out " + path("inst.txt")));
  CHECK(g["tasks"] == 3);
  CHECK(fs::exists(path("inst.txt")));

  auto e = summary(run("expert" + desk() + " --instance " + path("inst.txt") + " --out " + path("exp.txt")));
  CHECK(e["sensed"] == 3);

  auto d = summary(run("demos" + desk() + " --demos 20 --workers 2 --out " + path("demos.bin")));
  CHECK(d["accepted"] == 20);

  auto bc = summary(run("train-bc" + desk() + " --dataset " + path("demos.bin") + " --epochs 2 --out " + path("bc.ckpt")));
  CHECK(bc["epochs"] == 2);
  CHECK(bc["validation_accuracy"].get<double>() >= 0.0);

  auto ppo = summary(run("train-ppo" + desk() + " --ckpt " + path("bc.ckpt") + " --steps 1024 --out " + path("ppo.ckpt")));
  CHECK(ppo["steps"].get<int>() >= 1024);

  auto dist = summary(run("distill" + desk() + " --ckpt " + path("ppo.ckpt") + " --dataset " + path("demos.bin") +
                          " --epochs 2 --out " + path("dist.ckpt")));
  CHECK(dist["heldout_mse"].get<double>() >= 0.0);
  CHECK(dist["action_agreement"].get<double>() <= 1.0);

  auto ev = summary(run("eval" + desk() + " --ckpt " + path("dist.ckpt") + " --episodes 3 --csv-dir " + path("csv") +
                        " --out " + path("eval.json")));
  CHECK(ev["source"] == "adaptation");
  CHECK(ev["episodes"] == 3);
  CHECK(json::parse(slurp(path("eval.json")))["episodes"] == 3);
  int csvs = 0;
  for (const auto& entry : fs::directory_iterator(path("csv"))) csvs += entry.path().extension() == ".csv";
  CHECK(csvs == 3);

  auto pi = summary(run("eval" + desk() + " --ckpt " + path("dist.ckpt") + " --episodes 2 --pi-eval"));
  CHECK(pi["source"] == "encoder");

  auto ex = summary(run("eval" + desk() + " --expert --episodes 3"));
  CHECK(ex["sensing_rate"] == 1.0);

  auto bench = summary(run("bench" + desk() + " --ckpt " + path("dist.ckpt") + " --instances 10"));
  CHECK(bench["instances"] == 10);
  CHECK(bench["ratio"].get<double>() > 0.0);

  auto plot = summary(run("plot" + desk() + " --instance " + path("inst.txt") + " --expert-path " + path("exp.txt") +
                          " --ckpt " + path("dist.ckpt") + " --out " + path("traj.svg")));
  CHECK(plot["cmd"] == "plot");
  CHECK(slurp(path("traj.svg")).find("class=\"agent\"") != std::string::npos);
}

TEST_CASE("dense baseline trains from scratch") {
  auto r = summary(run("train-ppo" + desk() + " --dense --steps 512 --out " + path("dense.ckpt")));
  CHECK(r["steps"].get<int>() >= 512);
  auto ev = summary(run("eval" + desk() + " --ckpt " + path("dense.ckpt") + " --episodes 2 --dense"));
  CHECK(ev["source"] == "encoder-zeroed");
}

TEST_CASE("explicit flags override the config file") {
  auto g = summary(run("gen" + desk() + " --tasks 4 --out " + path("four.txt")));
  CHECK(g["tasks"] == 4);
}

TEST_CASE("validation failures exit with code 1") {
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("gen --tasks 3").code == 1);
  CHECK(run("gen --tasks 0 --out " + path("x.txt")).code == 1);
  CHECK(run("gen --map 100 --out " + path("x.txt")).code == 1);
  CHECK(run("expert --instance " + path("missing.txt") + " --out " + path("x.txt")).code == 1);
  CHECK(run("eval --episodes 2 --tasks 3").code == 1);

  std::ofstream(path("broken.txt")) << "not an instance\n";
  const auto bad = run("expert --instance " + path("broken.txt") + " --out " + path("x.txt"));
  CHECK(bad.code == 1);
  CHECK(bad.err.find("broken.txt:1") != std::string::npos);

  std::ofstream(path("broken.json")) << "{ nope";
  CHECK(run("gen --config " + path("broken.json") + " --out " + path("x.txt")).code == 1);
}

TEST_CASE("mismatched artifacts are rejected") {
  summary(run("demos" + desk() + " --demos 4 --out " + path("d3.bin")));
  summary(run("train-bc" + desk() + " --dataset " + path("d3.bin") + " --epochs 1 --out " + path("b3.ckpt")));
  const auto r = run("eval" + desk() + " --tasks 5 --ckpt " + path("b3.ckpt") + " --episodes 1");
  CHECK(r.code == 1);
  CHECK(r.err.find("tasks") != std::string::npos);
}
