#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "dtspn/demos.hpp"
#include "dtspn/errors.hpp"
#include "dtspn/evaluate.hpp"
#include "dtspn/learn.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Settings {
  std::uint64_t seed = 1;
  std::size_t tasks = 20;
  std::vector<double> map{800.0, 800.0};
  double sense = 58.0;
  double turn = 30.0;
  std::string out;
  std::string config;
  dtspn::EnvConfig env;
  dtspn::SamplingConfig sampling;
  dtspn::SolverConfig solver;
  dtspn::TrainConfig train;
  int lookahead = 2;
  bool literal_goal_reward = false;
};

struct Shared {
  CLI::Option* seed = nullptr;
  CLI::Option* tasks = nullptr;
  CLI::Option* map = nullptr;
  CLI::Option* sense = nullptr;
  CLI::Option* turn = nullptr;
};

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void apply_config(Settings& s, const Shared& flags) {
  if (s.config.empty()) return;
  std::ifstream in(s.config);
  if (!in) throw dtspn::ValidationError("cannot open config file " + s.config);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw dtspn::ParseError(s.config + ": " + e.what());
  }
  try {
    if (!flags.seed->count()) take(j, "seed", s.seed);
    if (!flags.tasks->count()) take(j, "tasks", s.tasks);
    if (!flags.map->count()) take(j, "map", s.map);
    if (!flags.sense->count()) take(j, "sense", s.sense);
    if (!flags.turn->count()) take(j, "turn", s.turn);
    take(j, "lookahead", s.lookahead);
    if (j.contains("env")) {
      const auto& e = j["env"];
      take(e, "v", s.env.v);
      take(e, "dt", s.env.dt);
      take(e, "n_actions", s.env.n_actions);
      take(e, "omega_max", s.env.omega_max);
      take(e, "max_steps_eval", s.env.max_steps_eval);
      take(e, "max_steps_train", s.env.max_steps_train);
      take(e, "train_cutoff_dist", s.env.train_cutoff_dist);
      take(e, "literal_goal_reward", s.env.literal_goal_reward);
      take(e, "sense_substep", s.env.sense_substep);
      take(e, "progress_window", s.env.progress_window);
    }
    if (j.contains("sampling")) {
      const auto& e = j["sampling"];
      take(e, "n_pos", s.sampling.n_pos);
      take(e, "n_head", s.sampling.n_head);
      take(e, "radius_factor", s.sampling.radius_factor);
    }
    if (j.contains("solver")) {
      const auto& e = j["solver"];
      take(e, "seed", s.solver.seed);
      take(e, "move_cap_factor", s.solver.move_cap_factor);
      take(e, "kicks", s.solver.kicks);
      take(e, "neighbors", s.solver.neighbors);
      take(e, "full_search_limit", s.solver.full_search_limit);
    }
    if (j.contains("train")) {
      const auto& e = j["train"];
      auto& t = s.train;
      take(e, "gamma", t.gamma);
      take(e, "bc_lr", t.bc_lr);
      take(e, "bc_batch", t.bc_batch);
      take(e, "bc_epochs", t.bc_epochs);
      take(e, "ppo_actor_lr", t.ppo_actor_lr);
      take(e, "ppo_critic_lr", t.ppo_critic_lr);
      take(e, "ppo_clip", t.ppo_clip);
      take(e, "gae_lambda", t.gae_lambda);
      take(e, "entropy_coef", t.entropy_coef);
      take(e, "steps_budget", t.steps_budget);
      take(e, "rollout_steps", t.rollout_steps);
      take(e, "n_envs", t.n_envs);
      take(e, "minibatch", t.minibatch);
      take(e, "epochs_per_batch", t.epochs_per_batch);
      take(e, "max_grad_norm", t.max_grad_norm);
      take(e, "critic_warmup_steps", t.critic_warmup_steps);
      take(e, "critic_epochs", t.critic_epochs);
      take(e, "distill_epochs", t.distill_epochs);
      take(e, "distill_lr", t.distill_lr);
      take(e, "checkpoint_episodes", t.checkpoint_episodes);
      take(e, "checkpoint_every", t.checkpoint_every);
    }
  } catch (const json::exception& e) {
    throw dtspn::ValidationError(s.config + ": " + e.what());
  }
}

dtspn::InstanceConfig instance_config(const Settings& s) {
  dtspn::InstanceConfig c;
  if (s.map.size() != 2) throw dtspn::ValidationError("--map takes exactly two values");
  c.map_width = s.map[0];
  c.map_height = s.map[1];
  c.r_sense = s.sense;
  c.turn_radius = s.turn;
  c.validate();
  return c;
}

dtspn::EnvConfig env_config(const Settings& s) {
  dtspn::EnvConfig e = s.env;
  e.turn_radius = s.turn;
  e.omega_max = e.v / s.turn;
  if (s.literal_goal_reward) e.literal_goal_reward = true;
  e.validate();
  return e;
}

dtspn::DemoConfig demo_config(const Settings& s) {
  dtspn::DemoConfig d;
  d.env = env_config(s);
  d.instance = instance_config(s);
  d.n_tasks = s.tasks;
  d.sampling = s.sampling;
  d.solver = s.solver;
  d.lookahead = s.lookahead;
  d.gamma = s.train.gamma;
  return d;
}

void print(const json& j) { std::cout << j.dump() << std::endl; }

Shared add_shared(CLI::App* app, Settings& s, bool with_out = true) {
  Shared f;
  f.seed = app->add_option("--seed", s.seed, "Random seed");
  f.tasks = app->add_option("--tasks", s.tasks, "Number of tasks")->check(CLI::PositiveNumber);
  f.map = app->add_option("--map", s.map, "Map width and height")->expected(2);
  f.sense = app->add_option("--sense", s.sense, "Sensing radius")->check(CLI::PositiveNumber);
  f.turn = app->add_option("--turn", s.turn, "Minimum turning radius")->check(CLI::PositiveNumber);
  if (with_out) app->add_option("--out", s.out, "Output path");
  app->add_option("--config", s.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_flag("--literal-goal-reward,--literal-eq7", s.literal_goal_reward, "Goal reward counts all sensed tasks on activation");
  return f;
}

std::vector<dtspn::Episode> make_episodes(const Settings& s, std::size_t count, std::uint64_t first_seed) {
  const auto factory = dtspn::make_episode_factory(s.tasks, instance_config(s), s.sampling, s.solver, env_config(s));
  std::vector<dtspn::Episode> eps;
  for (std::uint64_t seed = first_seed; eps.size() < count; ++seed) {
    try {
      eps.push_back(factory(seed));
    } catch (const dtspn::SensingGap&) {
    }
    if (seed - first_seed > count * 4 + 64) throw std::runtime_error("too many instances without a complete expert path");
  }
  return eps;
}

json metrics_json(const dtspn::Metrics& m) {
  json j{{"avg_reward", m.avg_reward},
         {"avg_return", m.avg_return},
         {"sensing_rate", m.sensing_rate},
         {"successes", m.successes},
         {"episodes", m.episodes}};
  if (m.mean_time) j["mean_time"] = *m.mean_time;
  if (m.median_time) j["median_time"] = *m.median_time;
  return j;
}

void require_out(const Settings& s) {
  if (s.out.empty()) throw dtspn::ValidationError("--out is required");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DTSPN toolkit: instances, expert planning, demonstrations, training and evaluation"};
  app.require_subcommand(1);
  Settings s;

  std::string instance_path, expert_path, dataset_path, ckpt_path, csv_dir, svg_path;
  std::size_t n_demos = 100, n_episodes = 50, n_instances = 10;
  std::size_t steps = 0;
  int epochs = -1;
  unsigned workers = 1;
  bool pi_eval = false, dense = false, no_privileged = false, use_expert = false;

  auto* gen = app.add_subcommand("gen", "Generate a random instance");
  const Shared gen_f = add_shared(gen, s);

  auto* expert = app.add_subcommand("expert", "Plan an expert path for an instance");
  const Shared expert_f = add_shared(expert, s);
  expert->add_option("--instance", instance_path, "Instance file")->required()->check(CLI::ExistingFile);

  auto* demos = app.add_subcommand("demos", "Collect expert demonstrations");
  const Shared demos_f = add_shared(demos, s);
  demos->add_option("--demos", n_demos, "Number of accepted demonstrations")->check(CLI::PositiveNumber);
  demos->add_option("--workers", workers, "Worker threads");

  auto* bc = app.add_subcommand("train-bc", "Behavioral cloning of policy and critic");
  const Shared bc_f = add_shared(bc, s);
  bc->add_option("--dataset", dataset_path, "Demonstration dataset")->required()->check(CLI::ExistingFile);
  bc->add_option("--epochs", epochs, "Training epochs");
  bc->add_flag("--no-privileged", no_privileged, "Zero the privileged block");

  auto* ppo = app.add_subcommand("train-ppo", "Policy-gradient fine-tuning");
  const Shared ppo_f = add_shared(ppo, s);
  ppo->add_option("--ckpt", ckpt_path, "Initial checkpoint")->check(CLI::ExistingFile);
  ppo->add_option("--steps", steps, "Environment step budget");
  ppo->add_flag("--dense", dense, "Train from scratch without privileged input");

  auto* distill = app.add_subcommand("distill", "Train the adaptation network");
  const Shared distill_f = add_shared(distill, s);
  distill->add_option("--ckpt", ckpt_path, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  distill->add_option("--dataset", dataset_path, "Demonstration dataset")->required()->check(CLI::ExistingFile);
  distill->add_option("--epochs", epochs, "Training epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or the expert");
  const Shared eval_f = add_shared(eval, s);
  eval->add_option("--ckpt", ckpt_path, "Checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--instance", instance_path, "Evaluate a single instance file")->check(CLI::ExistingFile);
  eval->add_option("--episodes", n_episodes, "Number of generated episodes")->check(CLI::PositiveNumber);
  eval->add_flag("--pi-eval", pi_eval, "Use the privileged encoder instead of the adaptation network");
  eval->add_flag("--dense", dense, "Feed the encoder zeros in place of the privileged block");
  eval->add_flag("--expert", use_expert, "Replay the expert instead of a checkpoint");
  eval->add_option("--csv-dir", csv_dir, "Directory for per-episode CSV records");

  auto* bench = app.add_subcommand("bench", "Expert planning vs policy rollout timing");
  const Shared bench_f = add_shared(bench, s);
  bench->add_option("--ckpt", ckpt_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--instances", n_instances, "Number of instances (at least 10)");

  auto* plot = app.add_subcommand("plot", "Render a trajectory SVG");
  const Shared plot_f = add_shared(plot, s);
  plot->add_option("--instance", instance_path, "Instance file")->required()->check(CLI::ExistingFile);
  plot->add_option("--expert-path", expert_path, "Expert path file")->check(CLI::ExistingFile);
  plot->add_option("--ckpt", ckpt_path, "Checkpoint; the expert is replayed when absent")->check(CLI::ExistingFile);
  plot->add_flag("--pi-eval", pi_eval, "Use the privileged encoder");
  plot->add_option("--csv", csv_dir, "Also write the episode CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    json out;
    if (gen->parsed()) {
      apply_config(s, gen_f);
      require_out(s);
      const auto inst = dtspn::generate(s.tasks, s.seed, instance_config(s));
      dtspn::save_instance(inst, s.out);
      out = {{"cmd", "gen"}, {"out", s.out}, {"tasks", inst.n_tasks()}, {"seed", s.seed}};
    } else if (expert->parsed()) {
      apply_config(s, expert_f);
      require_out(s);
      const auto inst = dtspn::load_instance(instance_path);
      s.turn = inst.turn_radius;
      const auto path = dtspn::plan(inst, s.sampling, s.solver, env_config(s).step_dist());
      dtspn::save_expert_path(path, s.out);
      out = {{"cmd", "expert"},
             {"out", s.out},
             {"length", path.total_length},
             {"waypoints", path.waypoints.size()},
             {"sensed", path.sensed_order.size()},
             {"solve_seconds", path.solve_seconds}};
    } else if (demos->parsed()) {
      apply_config(s, demos_f);
      require_out(s);
      const auto cfg = demo_config(s);
      const auto report = dtspn::collect_many(n_demos, s.seed, cfg, 0, workers);
      dtspn::Dataset ds;
      ds.header.env = cfg.env;
      ds.header.instance = cfg.instance;
      ds.header.n_tasks = static_cast<std::uint32_t>(s.tasks);
      ds.header.common_dim = static_cast<std::uint32_t>(dtspn::common_dim(s.tasks));
      ds.header.privileged_dim = static_cast<std::uint32_t>(dtspn::kPrivilegedDim);
      ds.demos = report.accepted;
      dtspn::save_dataset(ds, s.out);
      out = {{"cmd", "demos"},
             {"out", s.out},
             {"accepted", report.accepted.size()},
             {"rejected", report.rejected_seeds.size()},
             {"acceptance_rate", report.acceptance_rate()},
             {"transitions", ds.n_transitions()}};
      if (report.accepted.size() < n_demos) {
        print(out);
        std::cerr << "error: only " << report.accepted.size() << " of " << n_demos << " demonstrations accepted\n";
        return 2;
      }
    } else if (bc->parsed()) {
      apply_config(s, bc_f);
      require_out(s);
      const auto ds = dtspn::load_dataset(dataset_path);
      if (epochs >= 0) s.train.bc_epochs = epochs;
      s.train.seed = s.seed;
      auto bundle = dtspn::ModelBundle::create(dtspn::BundleDims::for_tasks(static_cast<int>(ds.header.n_tasks)), s.seed);
      const auto res = dtspn::bc_pretrain(ds.demos, bundle, s.train, !no_privileged);
      const auto cres = dtspn::critic_init(ds.demos, bundle, s.train);
      dtspn::save_bundle(bundle, s.out);
      out = {{"cmd", "train-bc"},
             {"out", s.out},
             {"epochs", res.epochs.size()},
             {"validation_accuracy", res.final_validation_accuracy()},
             {"train_accuracy", res.epochs.empty() ? 0.0 : res.epochs.back().train_accuracy},
             {"critic_validation_mse", cres.validation_mse},
             {"critic_target_variance", cres.target_variance}};
    } else if (ppo->parsed()) {
      apply_config(s, ppo_f);
      require_out(s);
      if (steps > 0) s.train.steps_budget = steps;
      s.train.seed = s.seed;
      const auto dims = dtspn::BundleDims::for_tasks(static_cast<int>(s.tasks));
      dtspn::ModelBundle bundle;
      if (dense) {
        bundle = dtspn::ModelBundle::create(dims, s.seed);
        s.train.use_privileged = false;
      } else {
        if (ckpt_path.empty()) throw dtspn::ValidationError("--ckpt is required unless --dense is given");
        bundle = dtspn::load_bundle(ckpt_path);
        dtspn::check_compatible(bundle, dtspn::generate(s.tasks, 0, instance_config(s)));
      }
      const auto env = env_config(s);
      const auto factory = dtspn::make_episode_factory(s.tasks, instance_config(s), s.sampling, s.solver, env);
      const auto res = dtspn::ppo_finetune(factory, bundle, s.train, env);
      dtspn::save_bundle(bundle, s.out);
      json curve = json::array();
      for (const auto& p : res.curve) curve.push_back(p.avg_episode_reward);
      out = {{"cmd", "train-ppo"},
             {"out", s.out},
             {"steps", res.steps},
             {"best_checkpoint", res.best_checkpoint},
             {"checkpoint_scores", res.checkpoint_scores},
             {"curve", curve}};
    } else if (distill->parsed()) {
      apply_config(s, distill_f);
      require_out(s);
      auto bundle = dtspn::load_bundle(ckpt_path);
      const auto ds = dtspn::load_dataset(dataset_path, static_cast<std::uint32_t>(bundle.dims.n_tasks));
      if (epochs >= 0) s.train.distill_epochs = epochs;
      s.train.seed = s.seed;
      const auto res = dtspn::distill_adaptation(ds.demos, bundle, s.train);
      dtspn::save_bundle(bundle, s.out);
      out = {{"cmd", "distill"},
             {"out", s.out},
             {"heldout_mse", res.heldout_mse},
             {"heldout_z_variance", res.heldout_z_variance},
             {"action_agreement", res.action_agreement}};
    } else if (eval->parsed()) {
      apply_config(s, eval_f);
      std::vector<dtspn::Episode> eps;
      if (!instance_path.empty()) {
        auto inst = dtspn::load_instance(instance_path);
        s.tasks = inst.n_tasks();
        s.turn = inst.turn_radius;
        auto path = dtspn::plan(inst, s.sampling, s.solver, env_config(s).step_dist());
        eps.push_back({std::move(inst), std::move(path)});
      } else {
        eps = make_episodes(s, n_episodes, s.seed);
      }
      dtspn::EvalConfig cfg;
      cfg.env = env_config(s);
      cfg.gamma = s.train.gamma;
      cfg.pi_eval = pi_eval;
      cfg.zero_privileged = dense;
      cfg.lookahead = s.lookahead;
      dtspn::EvalResult res;
      if (use_expert) {
        res = dtspn::evaluate_expert(eps, cfg);
      } else {
        if (ckpt_path.empty()) throw dtspn::ValidationError("--ckpt is required unless --expert is given");
        const auto bundle = dtspn::load_bundle(ckpt_path);
        res = dtspn::evaluate(bundle, eps, cfg);
      }
      if (!csv_dir.empty()) {
        fs::create_directories(csv_dir);
        for (std::size_t i = 0; i < res.records.size(); ++i) {
          dtspn::write_episode_csv(res.records[i],
                                   fs::path(csv_dir) / ("episode_" + std::to_string(res.records[i].seed) + ".csv"));
        }
      }
      out = {{"cmd", "eval"}, {"source", use_expert ? "expert" : dense ? "encoder-zeroed" : pi_eval ? "encoder" : "adaptation"}};
      out.update(metrics_json(res.metrics));
      if (!s.out.empty()) {
        std::ofstream f(s.out);
        f << out.dump(2) << "\n";
      }
    } else if (bench->parsed()) {
      apply_config(s, bench_f);
      const auto bundle = dtspn::load_bundle(ckpt_path);
      std::vector<dtspn::Instance> insts;
      for (std::size_t i = 0; i < n_instances; ++i) insts.push_back(dtspn::generate(s.tasks, s.seed + i, instance_config(s)));
      const auto r = dtspn::benchmark_speed(insts, bundle, s.sampling, s.solver, env_config(s));
      out = {{"cmd", "bench"},
             {"instances", r.instances},
             {"median_expert_seconds", r.median_expert_seconds},
             {"median_policy_seconds", r.median_policy_seconds},
             {"ratio", r.ratio}};
    } else if (plot->parsed()) {
      apply_config(s, plot_f);
      require_out(s);
      auto inst = dtspn::load_instance(instance_path);
      s.tasks = inst.n_tasks();
      s.turn = inst.turn_radius;
      dtspn::ExpertPath path = expert_path.empty()
                                   ? dtspn::plan(inst, s.sampling, s.solver, env_config(s).step_dist())
                                   : dtspn::load_expert_path(expert_path);
      dtspn::EvalConfig cfg;
      cfg.env = env_config(s);
      cfg.pi_eval = pi_eval;
      cfg.lookahead = s.lookahead;
      const std::vector<dtspn::Episode> eps{{inst, path}};
      dtspn::EvalResult res;
      if (ckpt_path.empty()) {
        res = dtspn::evaluate_expert(eps, cfg);
      } else {
        const auto bundle = dtspn::load_bundle(ckpt_path);
        res = dtspn::evaluate(bundle, eps, cfg);
      }
      dtspn::emit_trajectory_svg(res.records.front(), inst, &path, s.out);
      if (!csv_dir.empty()) dtspn::write_episode_csv(res.records.front(), csv_dir);
      out = {{"cmd", "plot"}, {"out", s.out}, {"steps", res.records.front().steps()},
             {"sensing_fraction", res.records.front().sensing_fraction()}};
    }
    print(out);
    return 0;
  } catch (const dtspn::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
