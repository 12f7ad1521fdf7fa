#include "dtspn/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "dtspn/binary_io.hpp"
#include "dtspn/errors.hpp"

namespace dtspn {

namespace {

constexpr char kBundleMagic[9] = "DTSPNET1";
constexpr std::uint32_t kBundleVersion = 1;

std::vector<int> hidden_stack(int in, int hidden, int depth, int out) {
  std::vector<int> dims{in};
  for (int i = 0; i < depth; ++i) dims.push_back(hidden);
  dims.push_back(out);
  return dims;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

int argmax_col(const Eigen::MatrixXd& m, Eigen::Index c) {
  Eigen::Index best = 0;
  for (Eigen::Index r = 1; r < m.rows(); ++r)
    if (m(r, c) > m(best, c)) best = r;
  return static_cast<int>(best);
}

struct ActorPass {
  Network::Tape enc_tape;
  Network::Tape pol_tape;
  Eigen::MatrixXd z;
  Eigen::MatrixXd logits;
};

void actor_forward(const ModelBundle& b, const Eigen::MatrixXd& common, const Eigen::MatrixXd& priv, ActorPass& pass) {
  pass.z = b.encoder.forward(vstack(common, priv), pass.enc_tape);
  pass.logits = b.policy.forward(vstack(common, pass.z), pass.pol_tape);
}

void actor_backward(const ModelBundle& b, const ActorPass& pass, const Eigen::MatrixXd& grad_logits, Gradients& g_enc,
                    Gradients& g_pol) {
  const Eigen::MatrixXd d_in = b.policy.backward(pass.pol_tape, grad_logits, g_pol);
  b.encoder.backward(pass.enc_tape, d_in.bottomRows(b.dims.z_dim), g_enc);
}

Eigen::MatrixXd encode_batch(const ModelBundle& b, const Eigen::MatrixXd& common, const Eigen::MatrixXd& priv) {
  return b.encoder.forward(vstack(common, priv));
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

template <typename F>
void for_minibatches(std::vector<std::size_t>& idx, std::size_t batch, SplitMix64& rng, F&& f) {
  shuffle(idx.begin(), idx.end(), rng);
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t s = 0; s < idx.size(); s += batch) {
    const std::size_t e = std::min(idx.size(), s + batch);
    f(std::span<const std::size_t>(idx.data() + s, e - s));
  }
}

void check_dataset_dims(const FlatDataset& data, const ModelBundle& b) {
  if (data.common.rows() != b.dims.common_dim) {
    throw ShapeError("dataset common observation has " + std::to_string(data.common.rows()) +
                     " entries, model expects " + std::to_string(b.dims.common_dim));
  }
  if (data.privileged.rows() != b.dims.privileged_dim) {
    throw ShapeError("dataset privileged observation has " + std::to_string(data.privileged.rows()) +
                     " entries, model expects " + std::to_string(b.dims.privileged_dim));
  }
}

void write_network(std::ostream& out, const Network& net) {
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(net.dims().size()));
  for (int d : net.dims()) io::write<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) io::write<double>(out, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) io::write<double>(out, l.bias(r));
  }
}

Network read_network(std::istream& in, const char* name) {
  const auto n = io::read<std::uint32_t>(in, "layer count");
  if (n < 2 || n > 64) throw ParseError(std::string(name) + ": implausible layer count " + std::to_string(n));
  std::vector<int> dims(n);
  for (auto& d : dims) {
    const auto v = io::read<std::uint32_t>(in, "layer width");
    if (v == 0 || v > (1u << 20)) throw ParseError(std::string(name) + ": implausible layer width " + std::to_string(v));
    d = static_cast<int>(v);
  }
  Network net(dims);
  for (auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = io::read<double>(in, "weight");
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = io::read<double>(in, "bias");
  }
  return net;
}

void hash_network(io::Fnv1a& h, const Network& net) {
  h.add<std::uint32_t>(static_cast<std::uint32_t>(net.dims().size()));
  for (int d : net.dims()) h.add<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (const auto& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) h.add<double>(l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) h.add<double>(l.bias(r));
  }
}

void expect_dims(const Network& net, const std::vector<int>& want, const char* name) {
  if (net.dims() != want) {
    std::ostringstream os;
    os << name << " has layer widths [";
    for (std::size_t i = 0; i < net.dims().size(); ++i) os << (i ? " " : "") << net.dims()[i];
    os << "], expected [";
    for (std::size_t i = 0; i < want.size(); ++i) os << (i ? " " : "") << want[i];
    os << "]";
    throw ShapeError(os.str());
  }
}

}  // namespace

BundleDims BundleDims::for_tasks(int n_tasks) {
  BundleDims d;
  d.n_tasks = n_tasks;
  d.common_dim = static_cast<int>(dtspn::common_dim(static_cast<std::size_t>(n_tasks)));
  return d;
}

ModelBundle ModelBundle::create(const BundleDims& dims, std::uint64_t seed) {
  if (dims.common_dim < 1 || dims.privileged_dim < 0 || dims.z_dim < 1 || dims.n_actions < 1 || dims.hidden < 1 ||
      dims.depth < 0) {
    throw ValidationError("invalid bundle dimensions");
  }
  SplitMix64 rng(SplitMix64::mix(seed ^ 0x5EEDB0D1E5ULL));
  ModelBundle b;
  b.dims = dims;
  b.encoder = Network::init(hidden_stack(dims.common_dim + dims.privileged_dim, dims.hidden, dims.depth, dims.z_dim), rng);
  b.policy = Network::init(hidden_stack(dims.common_dim + dims.z_dim, dims.hidden, dims.depth, dims.n_actions), rng, 0.01);
  b.critic = Network::init(hidden_stack(dims.common_dim + dims.z_dim, dims.hidden, dims.depth, 1), rng);
  b.adaptation = Network::init(hidden_stack(dims.common_dim, dims.hidden, dims.depth, dims.z_dim), rng);
  return b;
}

std::uint64_t ModelBundle::fingerprint() const {
  io::Fnv1a h;
  for (int v : {dims.n_tasks, dims.common_dim, dims.privileged_dim, dims.z_dim, dims.n_actions, dims.hidden, dims.depth})
    h.add<std::int32_t>(v);
  hash_network(h, encoder);
  hash_network(h, policy);
  hash_network(h, critic);
  hash_network(h, adaptation);
  return h.value();
}

bool ModelBundle::all_finite() const {
  return encoder.all_finite() && policy.all_finite() && critic.all_finite() && adaptation.all_finite();
}

void ModelBundle::validate() const {
  expect_dims(encoder, hidden_stack(dims.common_dim + dims.privileged_dim, dims.hidden, dims.depth, dims.z_dim), "encoder");
  expect_dims(policy, hidden_stack(dims.common_dim + dims.z_dim, dims.hidden, dims.depth, dims.n_actions), "policy");
  expect_dims(critic, hidden_stack(dims.common_dim + dims.z_dim, dims.hidden, dims.depth, 1), "critic");
  expect_dims(adaptation, hidden_stack(dims.common_dim, dims.hidden, dims.depth, dims.z_dim), "adaptation");
}

void TrainConfig::validate() const {
  for (double lr : {bc_lr, ppo_actor_lr, ppo_critic_lr, distill_lr})
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("learning rates must be finite and nonnegative");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
  if (!(ppo_clip > 0.0 && ppo_clip < 1.0)) throw ValidationError("ppo_clip must lie in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ValidationError("gae_lambda must lie in [0, 1]");
  if (bc_batch < 1 || minibatch < 1) throw ValidationError("batch sizes must be positive");
  if (bc_epochs < 0 || epochs_per_batch < 0 || critic_epochs < 0 || distill_epochs < 0)
    throw ValidationError("epoch counts must be nonnegative");
  if (rollout_steps < 1 || n_envs < 1) throw ValidationError("rollout_steps and n_envs must be positive");
  if (checkpoint_episodes < 0 || checkpoint_every < 1) throw ValidationError("invalid checkpoint settings");
}

std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

FlatDataset flatten(const std::vector<Demonstration>& demos, double gamma) {
  FlatDataset d;
  std::size_t n = 0, cd = 0, pd = 0;
  for (const auto& demo : demos) {
    n += demo.transitions.size();
    if (!demo.transitions.empty() && cd == 0) {
      cd = demo.transitions.front().common_obs.size();
      pd = demo.transitions.front().privileged_obs.size();
    }
  }
  d.common.resize(static_cast<Eigen::Index>(cd), static_cast<Eigen::Index>(n));
  d.privileged.resize(static_cast<Eigen::Index>(pd), static_cast<Eigen::Index>(n));
  d.actions.reserve(n);
  Eigen::Index col = 0;
  for (std::size_t e = 0; e < demos.size(); ++e) {
    std::vector<double> rewards;
    for (const auto& t : demos[e].transitions) {
      if (t.common_obs.size() != cd || t.privileged_obs.size() != pd) {
        throw ShapeError("demonstration " + std::to_string(e) + " has inconsistent observation sizes");
      }
      d.common.col(col) = Eigen::Map<const Eigen::VectorXd>(t.common_obs.data(), static_cast<Eigen::Index>(cd));
      d.privileged.col(col) = Eigen::Map<const Eigen::VectorXd>(t.privileged_obs.data(), static_cast<Eigen::Index>(pd));
      d.actions.push_back(t.action);
      d.rewards.push_back(t.reward);
      d.episode.push_back(e);
      rewards.push_back(t.reward);
      ++col;
    }
    const auto g = returns_to_go(rewards, gamma);
    d.returns_to_go.insert(d.returns_to_go.end(), g.begin(), g.end());
  }
  return d;
}

EpisodeSplit split_episodes(std::size_t n_episodes, std::uint64_t seed, double holdout) {
  if (n_episodes < 2) throw ValidationError("need at least 2 episodes for a train/validation split");
  auto order = iota_indices(n_episodes);
  SplitMix64 rng(SplitMix64::mix(seed ^ 0x5B117ULL));
  shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::round(holdout * static_cast<double>(n_episodes)));
  n_val = std::clamp<std::size_t>(n_val, 1, n_episodes - 1);
  EpisodeSplit s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::vector<std::size_t> transitions_of(const FlatDataset& data, const std::vector<std::size_t>& episodes) {
  std::vector<bool> keep;
  for (std::size_t e : episodes) {
    if (e >= keep.size()) keep.resize(e + 1, false);
    keep[e] = true;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.episode[i] < keep.size() && keep[data.episode[i]]) idx.push_back(i);
  return idx;
}

BcResult bc_pretrain(const std::vector<Demonstration>& demos, ModelBundle& bundle, const TrainConfig& config,
                     bool use_privileged) {
  config.validate();
  bundle.validate();
  FlatDataset data = flatten(demos, config.gamma);
  if (data.size() == 0) throw ValidationError("behavioral cloning needs a nonempty dataset");
  check_dataset_dims(data, bundle);
  if (!use_privileged) data.privileged.setZero();
  for (int a : data.actions)
    if (a < 0 || a >= bundle.dims.n_actions) throw ValidationError("demonstration action out of range");

  const auto split = split_episodes(demos.size(), config.seed);
  auto train_idx = transitions_of(data, split.train);
  const auto val_idx = transitions_of(data, split.validation);
  if (train_idx.empty() || val_idx.empty()) throw ValidationError("dataset too small for a train/validation split");

  const Eigen::MatrixXd val_common = gather(data.common, val_idx);
  const Eigen::MatrixXd val_priv = gather(data.privileged, val_idx);

  Adam opt_enc(bundle.encoder, config.bc_lr), opt_pol(bundle.policy, config.bc_lr);
  Gradients g_enc = bundle.encoder.zero_gradients(), g_pol = bundle.policy.zero_gradients();
  SplitMix64 rng(SplitMix64::mix(config.seed ^ 0xBC0ULL));
  BcResult result;
  ActorPass pass;
  for (int epoch = 0; epoch < config.bc_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for_minibatches(train_idx, static_cast<std::size_t>(config.bc_batch), rng, [&](std::span<const std::size_t> mb) {
      const auto B = static_cast<Eigen::Index>(mb.size());
      actor_forward(bundle, gather(data.common, mb), gather(data.privileged, mb), pass);
      Eigen::MatrixXd grad(pass.logits.rows(), B);
      for (Eigen::Index c = 0; c < B; ++c) {
        const int a = data.actions[mb[static_cast<std::size_t>(c)]];
        const Eigen::VectorXd lp = log_softmax(pass.logits.col(c));
        loss_sum -= lp(a);
        if (argmax_col(pass.logits, c) == a) ++correct;
        grad.col(c) = lp.array().exp();
        grad(a, c) -= 1.0;
      }
      grad /= static_cast<double>(B);
      g_enc.set_zero();
      g_pol.set_zero();
      actor_backward(bundle, pass, grad, g_enc, g_pol);
      opt_enc.step(bundle.encoder, g_enc);
      opt_pol.step(bundle.policy, g_pol);
    });
    if (!bundle.all_finite()) throw DivergenceError("behavioral cloning produced non-finite parameters at epoch " + std::to_string(epoch));
    BcEpoch ep;
    ep.train_loss = loss_sum / static_cast<double>(train_idx.size());
    ep.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    const Eigen::MatrixXd logits = bundle.policy.forward(vstack(val_common, encode_batch(bundle, val_common, val_priv)));
    std::size_t vc = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      if (argmax_col(logits, c) == data.actions[val_idx[static_cast<std::size_t>(c)]]) ++vc;
    ep.validation_accuracy = static_cast<double>(vc) / static_cast<double>(val_idx.size());
    result.epochs.push_back(ep);
  }
  return result;
}

CriticResult critic_init(const std::vector<Demonstration>& demos, ModelBundle& bundle, const TrainConfig& config) {
  config.validate();
  bundle.validate();
  const FlatDataset data = flatten(demos, config.gamma);
  if (data.size() == 0) throw ValidationError("critic initialization needs a nonempty dataset");
  check_dataset_dims(data, bundle);
  const auto split = split_episodes(demos.size(), config.seed);
  auto train_idx = transitions_of(data, split.train);
  const auto val_idx = transitions_of(data, split.validation);

  const Eigen::MatrixXd critic_in = vstack(data.common, encode_batch(bundle, data.common, data.privileged));
  const Eigen::Map<const Eigen::RowVectorXd> targets(data.returns_to_go.data(), static_cast<Eigen::Index>(data.size()));

  Adam opt(bundle.critic, config.bc_lr);
  Gradients g = bundle.critic.zero_gradients();
  SplitMix64 rng(SplitMix64::mix(config.seed ^ 0xC0171CULL));
  Network::Tape tape;
  CriticResult result;
  for (int epoch = 0; epoch < config.critic_epochs; ++epoch) {
    double sq = 0.0;
    for_minibatches(train_idx, static_cast<std::size_t>(config.bc_batch), rng, [&](std::span<const std::size_t> mb) {
      const auto B = static_cast<Eigen::Index>(mb.size());
      const Eigen::MatrixXd v = bundle.critic.forward(gather(critic_in, mb), tape);
      Eigen::MatrixXd grad(1, B);
      for (Eigen::Index c = 0; c < B; ++c) {
        const double e = v(0, c) - targets(static_cast<Eigen::Index>(mb[static_cast<std::size_t>(c)]));
        sq += e * e;
        grad(0, c) = e / static_cast<double>(B);
      }
      g.set_zero();
      bundle.critic.backward(tape, grad, g);
      opt.step(bundle.critic, g);
    });
    if (!bundle.critic.all_finite()) throw DivergenceError("critic initialization produced non-finite parameters");
    result.train_mse.push_back(sq / static_cast<double>(train_idx.size()));
  }
  if (!val_idx.empty()) {
    const Eigen::MatrixXd v = bundle.critic.forward(gather(critic_in, val_idx));
    double mean = 0.0;
    for (std::size_t i : val_idx) mean += targets(static_cast<Eigen::Index>(i));
    mean /= static_cast<double>(val_idx.size());
    double mse = 0.0, var = 0.0;
    for (std::size_t k = 0; k < val_idx.size(); ++k) {
      const double t = targets(static_cast<Eigen::Index>(val_idx[k]));
      mse += (v(0, static_cast<Eigen::Index>(k)) - t) * (v(0, static_cast<Eigen::Index>(k)) - t);
      var += (t - mean) * (t - mean);
    }
    result.validation_mse = mse / static_cast<double>(val_idx.size());
    result.target_variance = var / static_cast<double>(val_idx.size());
  }
  return result;
}

EpisodeFactory make_episode_factory(std::size_t n_tasks, const InstanceConfig& instance, const SamplingConfig& sampling,
                                    const SolverConfig& solver, const EnvConfig& env) {
  const double spacing = env.step_dist();
  return [=](std::uint64_t seed) {
    Episode ep{generate(n_tasks, seed, instance), {}};
    ep.expert = plan(ep.instance, sampling, solver, spacing);
    return ep;
  };
}

PpoLossTerms ppo_policy_loss(const Eigen::MatrixXd& logits, std::span<const int> actions,
                             std::span<const double> old_logp, std::span<const double> advantages, double clip,
                             double entropy_coef, Eigen::MatrixXd& grad_logits) {
  const Eigen::Index B = logits.cols();
  if (static_cast<Eigen::Index>(actions.size()) != B || static_cast<Eigen::Index>(old_logp.size()) != B ||
      static_cast<Eigen::Index>(advantages.size()) != B) {
    throw ShapeError("policy loss inputs disagree on batch size");
  }
  grad_logits.setZero(logits.rows(), B);
  PpoLossTerms out;
  if (B == 0) return out;
  const double inv_b = 1.0 / static_cast<double>(B);
  std::size_t clipped = 0;
  for (Eigen::Index c = 0; c < B; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const int a = actions[k];
    const Eigen::VectorXd lp = log_softmax(logits.col(c));
    const Eigen::VectorXd p = lp.array().exp();
    const double ratio = std::exp(lp(a) - old_logp[k]);
    const double A = advantages[k];
    const double s1 = ratio * A;
    const double s2 = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * A;
    if (std::abs(ratio - 1.0) > clip) ++clipped;
    out.policy_loss -= std::min(s1, s2) * inv_b;
    if (s1 <= s2) {
      // d ratio / d logits = ratio * (onehot(a) - p)
      Eigen::VectorXd d = -p * ratio;
      d(a) += ratio;
      grad_logits.col(c) -= A * inv_b * d;
    }
    const double h = -(p.array() * lp.array()).sum();
    out.entropy += h * inv_b;
    grad_logits.col(c).array() += entropy_coef * inv_b * p.array() * (lp.array() + h);
  }
  out.policy_loss -= entropy_coef * out.entropy;
  out.clip_fraction = static_cast<double>(clipped) * inv_b;
  return out;
}

namespace {

struct Slot {
  Env env;
  Observation obs;
  double episode_reward = 0.0;
};

struct RolloutBuffer {
  std::vector<std::vector<double>> common, priv;
  std::vector<int> actions;
  std::vector<double> logp, values, rewards;
  std::vector<bool> dones;
};

Episode next_episode(const EpisodeFactory& factory, SplitMix64& seeds) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    try {
      return factory(seeds());
    } catch (const SensingGap&) {
    }
  }
  throw std::runtime_error("episode factory failed 64 times in a row");
}

Observation reset_fresh(Env& env, const EpisodeFactory& factory, SplitMix64& seeds) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const Episode ep = next_episode(factory, seeds);
    Observation obs = env.reset(ep.instance, &ep.expert, EnvMode::Train);
    if (!env.done()) return obs;
  }
  throw std::runtime_error("episode factory keeps producing episodes that finish at reset");
}

std::vector<double> privileged_or_zero(const Observation& obs, std::size_t dim, bool use_privileged) {
  if (use_privileged && obs.privileged) return *obs.privileged;
  return std::vector<double>(dim, 0.0);
}

double score_bundle(const ModelBundle& b, const std::vector<Episode>& episodes, const EnvConfig& env_config,
                    bool use_privileged) {
  if (episodes.empty()) return 0.0;
  Env env(env_config);
  double total = 0.0;
  for (const auto& ep : episodes) {
    Observation obs = env.reset(ep.instance, &ep.expert, EnvMode::Eval);
    while (!env.done()) {
      const auto priv = privileged_or_zero(obs, static_cast<std::size_t>(b.dims.privileged_dim), use_privileged);
      const int a = act(b, obs.common, true, std::span<const double>(priv), true);
      auto res = env.step(a);
      total += res.reward.total;
      obs = std::move(res.obs);
    }
  }
  return total / static_cast<double>(episodes.size());
}

Eigen::MatrixXd columns(const std::vector<std::vector<double>>& rows, std::size_t dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(rows[i].data(), static_cast<Eigen::Index>(dim));
  return m;
}

}  // namespace

PpoResult ppo_finetune(const EpisodeFactory& factory, ModelBundle& bundle, const TrainConfig& config,
                       const EnvConfig& env_config) {
  config.validate();
  env_config.validate();
  bundle.validate();
  const auto cd = static_cast<std::size_t>(bundle.dims.common_dim);
  const auto pd = static_cast<std::size_t>(bundle.dims.privileged_dim);
  const bool use_priv = config.use_privileged;

  SplitMix64 seeds(SplitMix64::mix(config.seed ^ 0x9F0E5EEDULL));
  SplitMix64 eval_seeds(SplitMix64::mix(config.seed ^ 0xC4EC9017ULL));
  SplitMix64 sampler(SplitMix64::mix(config.seed ^ 0x5A3F1EULL));
  SplitMix64 shuffler(SplitMix64::mix(config.seed ^ 0x3B5ULL));

  std::vector<Episode> checkpoint_set;
  for (int i = 0; i < config.checkpoint_episodes; ++i) checkpoint_set.push_back(next_episode(factory, eval_seeds));

  PpoResult result;
  ModelBundle best = bundle;
  double best_score = -std::numeric_limits<double>::infinity();
  auto checkpoint = [&] {
    if (checkpoint_set.empty()) return;
    const double s = score_bundle(bundle, checkpoint_set, env_config, use_priv);
    result.checkpoint_scores.push_back(s);
    if (s > best_score) {
      best_score = s;
      best = bundle;
      result.best_checkpoint = result.checkpoint_scores.size() - 1;
    }
  };
  checkpoint();

  std::vector<Slot> slots;
  for (int i = 0; i < config.n_envs; ++i) {
    Slot s{Env(env_config), {}, 0.0};
    s.obs = reset_fresh(s.env, factory, seeds);
    slots.push_back(std::move(s));
  }

  Adam opt_enc(bundle.encoder, config.ppo_actor_lr), opt_pol(bundle.policy, config.ppo_actor_lr);
  Adam opt_cri(bundle.critic, config.ppo_critic_lr);
  Gradients g_enc = bundle.encoder.zero_gradients(), g_pol = bundle.policy.zero_gradients();
  Gradients g_cri = bundle.critic.zero_gradients();

  const std::size_t per_env = static_cast<std::size_t>((config.rollout_steps + config.n_envs - 1) / config.n_envs);
  std::size_t batch_index = 0;
  auto value_of = [&](const std::vector<double>& common, const std::vector<double>& priv) {
    const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(common.data(), static_cast<Eigen::Index>(cd));
    const Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(priv.data(), static_cast<Eigen::Index>(pd));
    Eigen::VectorXd enc_in(c.size() + p.size());
    enc_in << c, p;
    const Eigen::VectorXd z = bundle.encoder.forward(enc_in);
    Eigen::VectorXd cri_in(c.size() + z.size());
    cri_in << c, z;
    return bundle.critic.forward(cri_in)(0);
  };

  while (result.steps < config.steps_budget) {
    std::vector<RolloutBuffer> bufs(slots.size());
    double finished_reward = 0.0;
    std::size_t finished = 0;
    for (std::size_t t = 0; t < per_env; ++t) {
      Eigen::MatrixXd C(static_cast<Eigen::Index>(cd), static_cast<Eigen::Index>(slots.size()));
      Eigen::MatrixXd P(static_cast<Eigen::Index>(pd), static_cast<Eigen::Index>(slots.size()));
      std::vector<std::vector<double>> privs(slots.size());
      for (std::size_t k = 0; k < slots.size(); ++k) {
        privs[k] = privileged_or_zero(slots[k].obs, pd, use_priv);
        C.col(static_cast<Eigen::Index>(k)) =
            Eigen::Map<const Eigen::VectorXd>(slots[k].obs.common.data(), static_cast<Eigen::Index>(cd));
        P.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(privs[k].data(), static_cast<Eigen::Index>(pd));
      }
      const Eigen::MatrixXd Z = encode_batch(bundle, C, P);
      const Eigen::MatrixXd logits = bundle.policy.forward(vstack(C, Z));
      const Eigen::MatrixXd V = bundle.critic.forward(vstack(C, Z));
      for (std::size_t k = 0; k < slots.size(); ++k) {
        auto& s = slots[k];
        auto& b = bufs[k];
        const Eigen::VectorXd lp = log_softmax(logits.col(static_cast<Eigen::Index>(k)));
        const double u = sampler.uniform();
        int a = static_cast<int>(lp.size()) - 1;
        double acc = 0.0;
        for (Eigen::Index i = 0; i < lp.size(); ++i) {
          acc += std::exp(lp(i));
          if (u < acc) {
            a = static_cast<int>(i);
            break;
          }
        }
        auto res = s.env.step(a);
        double reward = res.reward.total;
        s.episode_reward += reward;
        if (res.info.truncated && !res.info.all_sensed) {
          reward += config.gamma * value_of(res.obs.common, privileged_or_zero(res.obs, pd, use_priv));
        }
        b.common.push_back(std::move(s.obs.common));
        b.priv.push_back(std::move(privs[k]));
        b.actions.push_back(a);
        b.logp.push_back(lp(a));
        b.values.push_back(V(0, static_cast<Eigen::Index>(k)));
        b.rewards.push_back(reward);
        b.dones.push_back(res.done);
        if (res.done) {
          finished_reward += s.episode_reward;
          ++finished;
          s.episode_reward = 0.0;
          s.obs = reset_fresh(s.env, factory, seeds);
        } else {
          s.obs = std::move(res.obs);
        }
      }
    }

    std::vector<std::vector<double>> all_common, all_priv;
    std::vector<int> all_actions;
    std::vector<double> all_logp, all_adv, all_ret;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      auto& b = bufs[k];
      const double bootstrap = b.dones.back() ? 0.0 : value_of(slots[k].obs.common, privileged_or_zero(slots[k].obs, pd, use_priv));
      std::vector<double> adv(b.rewards.size());
      double gae = 0.0, next_v = bootstrap;
      for (std::size_t t = b.rewards.size(); t-- > 0;) {
        const double nonterminal = b.dones[t] ? 0.0 : 1.0;
        const double delta = b.rewards[t] + config.gamma * next_v * nonterminal - b.values[t];
        gae = delta + config.gamma * config.gae_lambda * nonterminal * gae;
        adv[t] = gae;
        next_v = b.values[t];
      }
      for (std::size_t t = 0; t < adv.size(); ++t) {
        all_ret.push_back(adv[t] + b.values[t]);
        all_adv.push_back(adv[t]);
      }
      std::move(b.common.begin(), b.common.end(), std::back_inserter(all_common));
      std::move(b.priv.begin(), b.priv.end(), std::back_inserter(all_priv));
      all_actions.insert(all_actions.end(), b.actions.begin(), b.actions.end());
      all_logp.insert(all_logp.end(), b.logp.begin(), b.logp.end());
    }
    const std::size_t T = all_actions.size();
    result.steps += T;
    {
      double mean = 0.0, var = 0.0;
      for (double a : all_adv) mean += a;
      mean /= static_cast<double>(T);
      for (double a : all_adv) var += (a - mean) * (a - mean);
      const double sd = std::sqrt(var / static_cast<double>(T));
      for (double& a : all_adv) a = (a - mean) / (sd + 1e-8);
    }
    const Eigen::MatrixXd C = columns(all_common, cd);
    const Eigen::MatrixXd P = columns(all_priv, pd);

    const bool actor_on = result.steps > config.critic_warmup_steps;
    auto idx = iota_indices(T);
    ActorPass pass;
    Network::Tape cri_tape;
    for (int epoch = 0; epoch < config.epochs_per_batch; ++epoch) {
      for_minibatches(idx, static_cast<std::size_t>(config.minibatch), shuffler, [&](std::span<const std::size_t> mb) {
        const auto B = static_cast<Eigen::Index>(mb.size());
        const Eigen::MatrixXd mc = gather(C, mb), mp = gather(P, mb);
        actor_forward(bundle, mc, mp, pass);
        std::vector<int> acts(mb.size());
        std::vector<double> olp(mb.size()), adv(mb.size());
        for (std::size_t i = 0; i < mb.size(); ++i) {
          acts[i] = all_actions[mb[i]];
          olp[i] = all_logp[mb[i]];
          adv[i] = all_adv[mb[i]];
        }
        if (actor_on) {
          Eigen::MatrixXd grad;
          ppo_policy_loss(pass.logits, acts, olp, adv, config.ppo_clip, config.entropy_coef, grad);
          g_enc.set_zero();
          g_pol.set_zero();
          actor_backward(bundle, pass, grad, g_enc, g_pol);
          clip_global_norm({&g_enc, &g_pol}, config.max_grad_norm);
        }
        const Eigen::MatrixXd v = bundle.critic.forward(vstack(mc, pass.z), cri_tape);
        Eigen::MatrixXd dv(1, B);
        for (Eigen::Index c = 0; c < B; ++c) dv(0, c) = (v(0, c) - all_ret[mb[static_cast<std::size_t>(c)]]) / static_cast<double>(B);
        g_cri.set_zero();
        bundle.critic.backward(cri_tape, dv, g_cri);
        clip_global_norm({&g_cri}, config.max_grad_norm);
        if (actor_on) {
          opt_enc.step(bundle.encoder, g_enc);
          opt_pol.step(bundle.policy, g_pol);
        }
        opt_cri.step(bundle.critic, g_cri);
      });
      if (!bundle.all_finite()) {
        throw DivergenceError("PPO produced non-finite parameters at batch " + std::to_string(batch_index) + ", epoch " +
                              std::to_string(epoch) + " after " + std::to_string(result.steps) + " steps");
      }
    }
    result.curve.push_back({result.steps, finished ? finished_reward / static_cast<double>(finished) : 0.0, finished});
    ++batch_index;
    if (batch_index % static_cast<std::size_t>(config.checkpoint_every) == 0 || result.steps >= config.steps_budget) {
      checkpoint();
    }
  }
  if (!checkpoint_set.empty()) bundle = best;
  return result;
}

DistillResult distill_metrics(const FlatDataset& data, const std::vector<std::size_t>& idx, const ModelBundle& bundle) {
  DistillResult r;
  if (idx.empty()) return r;
  const Eigen::MatrixXd c = gather(data.common, idx);
  const Eigen::MatrixXd z = encode_batch(bundle, c, gather(data.privileged, idx));
  const Eigen::MatrixXd zp = bundle.adaptation.forward(c);
  const double n = static_cast<double>(idx.size());
  r.heldout_mse = (z - zp).colwise().squaredNorm().sum() / n;
  const Eigen::VectorXd mean = z.rowwise().mean();
  r.heldout_z_variance = (z.colwise() - mean).colwise().squaredNorm().sum() / n;
  const Eigen::MatrixXd la = bundle.policy.forward(vstack(c, z));
  const Eigen::MatrixXd lb = bundle.policy.forward(vstack(c, zp));
  std::size_t agree = 0;
  for (Eigen::Index k = 0; k < la.cols(); ++k)
    if (argmax_col(la, k) == argmax_col(lb, k)) ++agree;
  r.action_agreement = static_cast<double>(agree) / n;
  return r;
}

DistillResult distill_adaptation(const std::vector<Demonstration>& demos, ModelBundle& bundle,
                                 const TrainConfig& config) {
  config.validate();
  bundle.validate();
  const FlatDataset data = flatten(demos, config.gamma);
  if (data.size() == 0) throw ValidationError("distillation needs a nonempty dataset");
  check_dataset_dims(data, bundle);
  const auto split = split_episodes(demos.size(), config.seed);
  auto train_idx = transitions_of(data, split.train);
  const auto val_idx = transitions_of(data, split.validation);
  const Eigen::MatrixXd targets = encode_batch(bundle, data.common, data.privileged);

  Adam opt(bundle.adaptation, config.distill_lr);
  Gradients g = bundle.adaptation.zero_gradients();
  SplitMix64 rng(SplitMix64::mix(config.seed ^ 0xD157ULL));
  Network::Tape tape;
  std::vector<double> train_mse;
  for (int epoch = 0; epoch < config.distill_epochs; ++epoch) {
    double sq = 0.0;
    for_minibatches(train_idx, static_cast<std::size_t>(config.bc_batch), rng, [&](std::span<const std::size_t> mb) {
      const Eigen::MatrixXd zp = bundle.adaptation.forward(gather(data.common, mb), tape);
      const Eigen::MatrixXd diff = zp - gather(targets, mb);
      sq += diff.squaredNorm();
      g.set_zero();
      bundle.adaptation.backward(tape, diff * (2.0 / static_cast<double>(mb.size())), g);
      opt.step(bundle.adaptation, g);
    });
    if (!bundle.adaptation.all_finite()) throw DivergenceError("distillation produced non-finite parameters");
    train_mse.push_back(sq / static_cast<double>(train_idx.size()));
  }
  DistillResult r = distill_metrics(data, val_idx, bundle);
  r.train_mse = std::move(train_mse);
  return r;
}

int argmax(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw ShapeError("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

Eigen::VectorXd latent(const ModelBundle& bundle, std::span<const double> common,
                       std::optional<std::span<const double>> privileged) {
  if (static_cast<int>(common.size()) != bundle.dims.common_dim) {
    throw ShapeError("common observation has " + std::to_string(common.size()) + " entries, model expects " +
                     std::to_string(bundle.dims.common_dim));
  }
  const Eigen::Map<const Eigen::VectorXd> c(common.data(), static_cast<Eigen::Index>(common.size()));
  if (!privileged) return bundle.adaptation.forward(Eigen::VectorXd(c));
  if (static_cast<int>(privileged->size()) != bundle.dims.privileged_dim) {
    throw ShapeError("privileged observation has " + std::to_string(privileged->size()) + " entries, model expects " +
                     std::to_string(bundle.dims.privileged_dim));
  }
  Eigen::VectorXd in(c.size() + static_cast<Eigen::Index>(privileged->size()));
  in << c, Eigen::Map<const Eigen::VectorXd>(privileged->data(), static_cast<Eigen::Index>(privileged->size()));
  return bundle.encoder.forward(in);
}

Eigen::VectorXd policy_logits(const ModelBundle& bundle, std::span<const double> common, const Eigen::VectorXd& z) {
  Eigen::VectorXd in(static_cast<Eigen::Index>(common.size()) + z.size());
  in << Eigen::Map<const Eigen::VectorXd>(common.data(), static_cast<Eigen::Index>(common.size())), z;
  return bundle.policy.forward(in);
}

int act(const ModelBundle& bundle, std::span<const double> common, bool use_privileged,
        std::optional<std::span<const double>> privileged, bool deterministic, SplitMix64* rng) {
  if (use_privileged && !privileged) throw ValidationError("privileged observation required when use_privileged is set");
  const Eigen::VectorXd z = latent(bundle, common, use_privileged ? privileged : std::nullopt);
  const Eigen::VectorXd logits = policy_logits(bundle, common, z);
  if (deterministic) return argmax(logits);
  if (!rng) throw ValidationError("stochastic action selection needs a random generator");
  const Eigen::VectorXd lp = log_softmax(logits);
  const double u = rng->uniform();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    acc += std::exp(lp(i));
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(lp.size()) - 1;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  bundle.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::write_magic(out, kBundleMagic);
  io::write<std::uint32_t>(out, kBundleVersion);
  const auto& d = bundle.dims;
  for (int v : {d.n_tasks, d.common_dim, d.privileged_dim, d.z_dim, d.n_actions, d.hidden, d.depth}) io::write<std::int32_t>(out, v);
  write_network(out, bundle.encoder);
  write_network(out, bundle.policy);
  write_network(out, bundle.critic);
  write_network(out, bundle.adaptation);
  io::write<std::uint64_t>(out, bundle.fingerprint());
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  const std::string src = path.string();
  io::expect_magic(in, kBundleMagic, src);
  const auto version = io::read<std::uint32_t>(in, "version");
  if (version != kBundleVersion) {
    throw ParseError(src + ": unsupported checkpoint version " + std::to_string(version));
  }
  ModelBundle b;
  b.dims.n_tasks = io::read<std::int32_t>(in, "n_tasks");
  b.dims.common_dim = io::read<std::int32_t>(in, "common_dim");
  b.dims.privileged_dim = io::read<std::int32_t>(in, "privileged_dim");
  b.dims.z_dim = io::read<std::int32_t>(in, "z_dim");
  b.dims.n_actions = io::read<std::int32_t>(in, "n_actions");
  b.dims.hidden = io::read<std::int32_t>(in, "hidden");
  b.dims.depth = io::read<std::int32_t>(in, "depth");
  b.encoder = read_network(in, "encoder");
  b.policy = read_network(in, "policy");
  b.critic = read_network(in, "critic");
  b.adaptation = read_network(in, "adaptation");
  const auto stored = io::read<std::uint64_t>(in, "fingerprint");
  b.validate();
  if (stored != b.fingerprint()) throw ParseError(src + ": fingerprint mismatch, file is corrupt");
  return b;
}

}  // namespace dtspn
