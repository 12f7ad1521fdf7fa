#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dtspn/demos.hpp"
#include "dtspn/env.hpp"
#include "dtspn/network.hpp"

namespace dtspn {

struct BundleDims {
  int n_tasks = 20;
  int common_dim = 83;
  int privileged_dim = static_cast<int>(kPrivilegedDim);
  int z_dim = 32;
  int n_actions = 7;
  int hidden = 128;
  int depth = 2;

  static BundleDims for_tasks(int n_tasks);
  friend bool operator==(const BundleDims&, const BundleDims&) = default;
};

/// Encoder (common ++ privileged -> z), policy and critic (common ++ z), and
/// the adaptation network (common -> z').
struct ModelBundle {
  BundleDims dims;
  Network encoder;
  Network policy;
  Network critic;
  Network adaptation;

  static ModelBundle create(const BundleDims& dims, std::uint64_t seed);
  std::uint64_t fingerprint() const;
  bool all_finite() const;
  void validate() const;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

struct TrainConfig {
  double gamma = 0.95;
  double bc_lr = 0.001;
  int bc_batch = 512;
  int bc_epochs = 50;
  double ppo_actor_lr = 0.003;
  double ppo_critic_lr = 0.001;
  double ppo_clip = 0.2;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  std::size_t steps_budget = 3'000'000;
  int rollout_steps = 4096;
  int n_envs = 8;
  int minibatch = 512;
  int epochs_per_batch = 4;
  double max_grad_norm = 0.5;
  /// Rollout steps at the start of fine-tuning during which only the critic learns.
  std::size_t critic_warmup_steps = 0;
  int critic_epochs = 30;
  int distill_epochs = 50;
  double distill_lr = 0.001;
  /// Episodes used to score checkpoints during fine-tuning; 0 disables checkpointing.
  int checkpoint_episodes = 16;
  int checkpoint_every = 5;
  /// Feed zeros instead of the privileged block (PPO-dense / no-PI ablation).
  bool use_privileged = true;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Column-stacked view of a dataset for batched training.
struct FlatDataset {
  Eigen::MatrixXd common;      // common_dim x N
  Eigen::MatrixXd privileged;  // privileged_dim x N
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> returns_to_go;
  std::vector<std::size_t> episode;

  std::size_t size() const { return actions.size(); }
};

FlatDataset flatten(const std::vector<Demonstration>& demos, double gamma);

/// Discounted reward-to-go for one episode ending in a terminal state.
std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma);

/// Split of episode indices into training and held-out sets (about 10% held out).
struct EpisodeSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
EpisodeSplit split_episodes(std::size_t n_episodes, std::uint64_t seed, double holdout = 0.1);

/// Transition indices belonging to the given episodes.
std::vector<std::size_t> transitions_of(const FlatDataset& data, const std::vector<std::size_t>& episodes);

struct BcEpoch {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct BcResult {
  std::vector<BcEpoch> epochs;
  double final_validation_accuracy() const { return epochs.empty() ? 0.0 : epochs.back().validation_accuracy; }
};

/// Behavioral cloning of encoder + policy with cross-entropy on expert actions.
BcResult bc_pretrain(const std::vector<Demonstration>& demos, ModelBundle& bundle, const TrainConfig& config,
                     bool use_privileged = true);

struct CriticResult {
  double validation_mse = 0.0;
  double target_variance = 0.0;
  std::vector<double> train_mse;
};

/// Regresses the critic onto discounted return-to-go with the encoder frozen.
CriticResult critic_init(const std::vector<Demonstration>& demos, ModelBundle& bundle, const TrainConfig& config);

struct Episode {
  Instance instance;
  ExpertPath expert;
};
using EpisodeFactory = std::function<Episode(std::uint64_t)>;

/// Factory that generates an instance for a seed and plans its expert path.
EpisodeFactory make_episode_factory(std::size_t n_tasks, const InstanceConfig& instance, const SamplingConfig& sampling,
                                    const SolverConfig& solver, const EnvConfig& env);

struct PpoCurvePoint {
  std::size_t steps = 0;
  double avg_episode_reward = 0.0;
  std::size_t episodes = 0;
};

struct PpoResult {
  std::vector<PpoCurvePoint> curve;
  /// Checkpoint scores (mean deterministic episode reward), the first one is the initial bundle.
  std::vector<double> checkpoint_scores;
  std::size_t best_checkpoint = 0;
  std::size_t steps = 0;
};

/// Clipped-surrogate policy gradient with GAE. On return `bundle` holds the
/// best-scoring checkpoint (the initial bundle included).
PpoResult ppo_finetune(const EpisodeFactory& factory, ModelBundle& bundle, const TrainConfig& config,
                       const EnvConfig& env_config);

struct PpoLossTerms {
  double policy_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// Clipped surrogate plus entropy bonus for a batch of logits (n_actions x B).
/// Writes d(loss)/d(logits) into grad_logits; loss = -mean(min(r A, clip(r) A)) - c * mean(H).
PpoLossTerms ppo_policy_loss(const Eigen::MatrixXd& logits, std::span<const int> actions,
                             std::span<const double> old_logp, std::span<const double> advantages, double clip,
                             double entropy_coef, Eigen::MatrixXd& grad_logits);

struct DistillResult {
  double heldout_mse = 0.0;
  double heldout_z_variance = 0.0;
  double action_agreement = 0.0;
  std::vector<double> train_mse;
};

/// Trains the adaptation network to reproduce the frozen encoder's latent from the common block.
DistillResult distill_adaptation(const std::vector<Demonstration>& demos, ModelBundle& bundle,
                                 const TrainConfig& config);

/// Held-out distillation metrics without training.
DistillResult distill_metrics(const FlatDataset& data, const std::vector<std::size_t>& idx, const ModelBundle& bundle);

/// z from the encoder (with privileged input) or from the adaptation network.
Eigen::VectorXd latent(const ModelBundle& bundle, std::span<const double> common,
                       std::optional<std::span<const double>> privileged);
Eigen::VectorXd policy_logits(const ModelBundle& bundle, std::span<const double> common, const Eigen::VectorXd& z);

/// Picks an action. Deterministic mode takes the first maximal logit;
/// otherwise samples from softmax(logits) with rng.
int act(const ModelBundle& bundle, std::span<const double> common, bool use_privileged,
        std::optional<std::span<const double>> privileged, bool deterministic, SplitMix64* rng = nullptr);

/// Index of the first maximal entry.
int argmax(const Eigen::VectorXd& v);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace dtspn
