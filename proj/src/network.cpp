#include "dtspn/network.hpp"

#include <cmath>
#include <string>

#include "dtspn/errors.hpp"

namespace dtspn {

void Gradients::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return s;
}

void Gradients::scale(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
}

Network::Network(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw ValidationError("a network needs at least an input and an output layer");
  for (int d : dims_)
    if (d < 1) throw ValidationError("layer widths must be positive");
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    layers_.push_back({Eigen::MatrixXd::Zero(dims_[i + 1], dims_[i]), Eigen::VectorXd::Zero(dims_[i + 1])});
  }
}

Network Network::init(std::vector<int> dims, SplitMix64& rng, double output_scale) {
  Network net(std::move(dims));
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    auto& l = net.layers_[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
    const double s = i + 1 == net.layers_.size() ? output_scale : 1.0;
    // column-major fill order keeps the draw sequence independent of Eigen internals
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = s * rng.uniform(-bound, bound);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = s * rng.uniform(-bound, bound);
  }
  return net;
}

Eigen::VectorXd Network::forward(const Eigen::VectorXd& x) const {
  if (x.size() != input_dim()) {
    throw ShapeError("network input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(input_dim()));
  }
  Eigen::VectorXd a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::VectorXd z = layers_[i].weight * a + layers_[i].bias;
    if (i + 1 < layers_.size()) z = z.array().tanh();
    a = std::move(z);
  }
  return a;
}

Eigen::MatrixXd Network::forward(const Eigen::MatrixXd& x) const {
  Tape tape;
  return forward(x, tape);
}

Eigen::MatrixXd Network::forward(const Eigen::MatrixXd& x, Tape& tape) const {
  if (x.rows() != input_dim()) {
    throw ShapeError("network input has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(input_dim()));
  }
  tape.acts.clear();
  tape.acts.reserve(layers_.size() + 1);
  tape.acts.push_back(x);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd z = layers_[i].weight * tape.acts.back();
    z.colwise() += layers_[i].bias;
    if (i + 1 < layers_.size()) z = z.array().tanh();
    tape.acts.push_back(std::move(z));
  }
  return tape.acts.back();
}

Eigen::MatrixXd Network::backward(const Tape& tape, const Eigen::MatrixXd& upstream, Gradients& grads) const {
  if (upstream.rows() != output_dim() || upstream.cols() != tape.acts.back().cols()) {
    throw ShapeError("upstream gradient shape does not match the network output");
  }
  if (grads.layers.size() != layers_.size()) grads = zero_gradients();
  Eigen::MatrixXd delta = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) {
      // tape.acts[k + 1] holds tanh output of layer k
      delta.array() *= 1.0 - tape.acts[k + 1].array().square();
    }
    grads.layers[k].weight.noalias() += delta * tape.acts[k].transpose();
    grads.layers[k].bias += delta.rowwise().sum();
    delta = layers_[k].weight.transpose() * delta;
  }
  return delta;
}

Gradients Network::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

bool Network::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool operator==(const Network& a, const Network& b) {
  if (a.dims_ != b.dims_) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].weight != b.layers_[i].weight || a.layers_[i].bias != b.layers_[i].bias) return false;
  }
  return true;
}

Gradients gradients(const Network& net, const Eigen::VectorXd& input, const Eigen::VectorXd& upstream) {
  if (input.size() != net.input_dim()) throw ShapeError("gradients: input dimension mismatch");
  if (upstream.size() != net.output_dim()) throw ShapeError("gradients: upstream dimension mismatch");
  Network::Tape tape;
  net.forward(Eigen::MatrixXd(input), tape);
  Gradients g = net.zero_gradients();
  net.backward(tape, Eigen::MatrixXd(upstream), g);
  return g;
}

double clip_global_norm(std::vector<Gradients*> grads, double max_norm) {
  double sq = 0.0;
  for (auto* g : grads) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    for (auto* g : grads) g->scale(max_norm / norm);
  }
  return norm;
}

Adam::Adam(const Network& net, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(Network& net, const Gradients& grads) {
  if (m_.layers.size() != net.layers().size()) {
    m_ = net.zero_gradients();
    v_ = net.zero_gradients();
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    param.array() -= lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
  };
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    auto& l = net.layers()[i];
    update(l.weight, m_.layers[i].weight, v_.layers[i].weight, grads.layers[i].weight);
    update(l.bias, m_.layers[i].bias, v_.layers[i].bias, grads.layers[i].bias);
  }
}

}  // namespace dtspn
