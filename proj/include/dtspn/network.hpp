#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dtspn/rng.hpp"

namespace dtspn {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Gradients share the parameter layout.
struct Gradients {
  std::vector<DenseLayer> layers;

  void set_zero();
  double squared_norm() const;
  void scale(double s);
};

/// Feed-forward network: tanh on hidden layers, identity on the output.
/// Batched calls take one sample per column.
class Network {
 public:
  Network() = default;
  /// Zero-initialized network with the given layer widths (input first).
  explicit Network(std::vector<int> dims);

  /// Uniform fan-in initialization; the last layer is multiplied by output_scale.
  static Network init(std::vector<int> dims, SplitMix64& rng, double output_scale = 1.0);

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Layer inputs recorded during a batched forward pass, plus the output.
  struct Tape {
    std::vector<Eigen::MatrixXd> acts;
  };

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape& tape) const;

  /// Adds d(sum(upstream .* output))/d(params) into grads and returns the
  /// gradient with respect to the input batch.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& upstream, Gradients& grads) const;

  Gradients zero_gradients() const;
  bool all_finite() const;
  std::size_t parameter_count() const;

  friend bool operator==(const Network& a, const Network& b);

 private:
  std::vector<int> dims_;
  std::vector<DenseLayer> layers_;
};

/// Exact reverse-mode gradient of output . upstream for a single sample.
Gradients gradients(const Network& net, const Eigen::VectorXd& input, const Eigen::VectorXd& upstream);

/// Rescales the gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<Gradients*> grads, double max_norm);

/// Moment-based adaptive optimizer with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(const Network& net, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Descends along grads.
  void step(Network& net, const Gradients& grads);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Gradients m_, v_;
};

}  // namespace dtspn
