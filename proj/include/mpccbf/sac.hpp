#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <vector>

#include "mpccbf/nn.hpp"

namespace mpccbf {

struct SacHyperparams {
  double lr_actor = 1e-5;
  double lr_critic = 1e-4;
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 256;
  int replay_capacity = 100000;
  double alpha = 0.2;  // entropy temperature, the starting value when auto_alpha is set
  bool auto_alpha = false;
  double target_entropy_per_dim = -1.0;  // auto_alpha target is this times the action size
  long total_steps = 300000;
  std::vector<int> hidden{512, 512};
  long warmup_steps = 1000;  // uniform random actions before the first update
  double reward_scale = 1.0;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  /// Throws ValidationError on a broken invariant.
  void validate() const;
  /// Small networks and learning rates sized for a single-core run.
  static SacHyperparams desk_scale();
};

struct Transition {
  Eigen::VectorXd obs;
  Eigen::VectorXd action;  // raw, in (-1, 1)
  double reward = 0.0;
  Eigen::VectorXd next_obs;
  bool done = false;
};

/// FIFO ring at capacity; uniform sampling with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const { return data_.at(i); }
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> data_;
};

/// Gaussian policy squashed by tanh. The network emits the mean and an
/// unconstrained log-std that is mapped smoothly into [log_std_min, log_std_max].
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden, double log_std_min,
                 double log_std_max);

  struct Sample {
    Eigen::MatrixXd action;     // tanh(u)
    Eigen::RowVectorXd log_prob;
    Eigen::MatrixXd noise;
    Eigen::MatrixXd mean;
    Eigen::MatrixXd log_std;
    Eigen::MatrixXd log_std_raw;
    Mlp::Cache cache;
  };

  /// Reparameterized sample a = tanh(mean + exp(log_std) * noise).
  Sample sample(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& noise) const;
  Eigen::MatrixXd deterministic(const Eigen::MatrixXd& obs) const;

  /// Gradient of sum_j(w_a[:,j] . a_j + w_lp[j] * log_prob_j) w.r.t. the
  /// network parameters, at the sample's fixed noise.
  Eigen::VectorXd backward(const Sample& s, const Eigen::MatrixXd& d_action,
                           const Eigen::RowVectorXd& d_log_prob) const;

  int obs_dim() const { return net.input_size(); }
  int act_dim() const { return act_dim_; }
  double log_std_min() const { return log_std_min_; }
  double log_std_max() const { return log_std_max_; }

  Mlp net;

 private:
  int act_dim_ = 0;
  double log_std_min_ = -5.0;
  double log_std_max_ = 2.0;
};

struct SacDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double entropy = 0.0;  // batch mean of -log_prob
  double alpha = 0.0;
};

class SacAgent {
 public:
  SacAgent() = default;
  SacAgent(int obs_dim, int act_dim, const SacHyperparams& hyper, std::uint64_t seed);

  /// Stochastic action for exploration.
  Eigen::VectorXd act(const Eigen::VectorXd& obs);
  Eigen::VectorXd act_deterministic(const Eigen::VectorXd& obs) const;

  SacDiagnostics update(const std::vector<const Transition*>& batch);

  /// Critic regression target for each transition, with next actions drawn
  /// from the given noise (one column per transition).
  Eigen::RowVectorXd critic_targets(const std::vector<const Transition*>& batch,
                                    const Eigen::MatrixXd& next_noise) const;

  /// Actor objective mean(alpha * log_prob - min(Q1, Q2)) at fixed noise, and
  /// its parameter gradient.
  double actor_objective(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& noise,
                         Eigen::VectorXd* grad) const;

  const SacHyperparams& hyper() const { return hyper_; }
  double alpha() const { return std::exp(log_alpha_); }
  std::mt19937_64& rng() { return rng_; }

  GaussianPolicy policy;
  Mlp q1, q2, q1_target, q2_target;

 private:
  Eigen::MatrixXd noise(int rows, int cols);

  SacHyperparams hyper_;
  Adam actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
  std::mt19937_64 rng_;
  double log_alpha_ = 0.0;
};

}  // namespace mpccbf
