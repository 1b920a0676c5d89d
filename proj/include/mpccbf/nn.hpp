#pragma once

#include <Eigen/Core>
#include <random>
#include <vector>

namespace mpccbf {

/// Fully connected network with tanh hidden layers and a linear output.
/// Batches are stored column-wise (one sample per column).
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {input, hidden..., output}; weights start at zero.
  explicit Mlp(std::vector<int> sizes);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  void initialize(std::mt19937_64& rng);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(weights_.size()); }
  std::size_t parameter_count() const;

  /// Flat parameters: per layer, W in row-major order followed by b.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  Eigen::MatrixXd& weight(int layer) { return weights_[layer]; }
  Eigen::VectorXd& bias(int layer) { return biases_[layer]; }
  const Eigen::MatrixXd& weight(int layer) const { return weights_[layer]; }
  const Eigen::VectorXd& bias(int layer) const { return biases_[layer]; }

  /// Layer inputs recorded by forward() for use in backward().
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;
    Eigen::MatrixXd output;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;

  /// Back-propagates dL/dY. Adds dL/dparams into *grad (flat layout, may be
  /// null) and returns dL/dX.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                           Eigen::VectorXd* grad) const;

  /// this <- tau * other + (1 - tau) * this.
  void blend_from(const Mlp& other, double tau);

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Gradient-descent step on params.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  void step(Mlp& net, const Eigen::VectorXd& grad);

  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

}  // namespace mpccbf
