#include "mpccbf/sac.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mpccbf/errors.hpp"
#include "mpccbf/rng.hpp"

namespace mpccbf {
namespace {

constexpr double kSquashEps = 1e-6;

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Eigen::MatrixXd stack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

}  // namespace

void SacHyperparams::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("sac.gamma must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("sac.tau must lie in (0, 1]");
  if (!(lr_actor >= 0.0 && lr_critic >= 0.0)) throw ValidationError("sac learning rates must be >= 0");
  if (batch_size < 1) throw ValidationError("sac.batch_size must be >= 1");
  if (replay_capacity < 1) throw ValidationError("sac.replay_capacity must be >= 1");
  if (!(alpha >= 0.0)) throw ValidationError("sac.alpha must be >= 0");
  if (auto_alpha && !(alpha > 0.0)) throw ValidationError("sac.alpha must be positive when auto_alpha is set");
  if (!std::isfinite(target_entropy_per_dim)) throw ValidationError("sac.target_entropy_per_dim must be finite");
  if (total_steps < 0 || warmup_steps < 0) throw ValidationError("sac step counts must be >= 0");
  if (hidden.empty()) throw ValidationError("sac.hidden needs at least one layer");
  for (int h : hidden)
    if (h <= 0) throw ValidationError("sac.hidden sizes must be positive");
  if (!(reward_scale > 0.0)) throw ValidationError("sac.reward_scale must be positive");
  if (!(log_std_min < log_std_max)) throw ValidationError("sac.log_std_min must be below log_std_max");
}

SacHyperparams SacHyperparams::desk_scale() {
  SacHyperparams h;
  h.lr_actor = 3e-4;
  h.lr_critic = 3e-4;
  h.hidden = {64, 64};
  h.total_steps = 50000;
  return h;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ValidationError("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (!std::isfinite(t.reward)) throw ValidationError("transition reward must be finite");
  if (data_.size() == capacity_) data_.pop_front();
  data_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (data_.empty()) throw ValidationError("cannot sample from an empty replay buffer");
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(data_.size()));
    out.push_back(&data_[std::min(k, data_.size() - 1)]);
  }
  return out;
}

GaussianPolicy::GaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden,
                               double log_std_min, double log_std_max)
    : net(layer_sizes(obs_dim, hidden, 2 * act_dim)),
      act_dim_(act_dim),
      log_std_min_(log_std_min),
      log_std_max_(log_std_max) {}

GaussianPolicy::Sample GaussianPolicy::sample(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& noise) const {
  if (noise.rows() != act_dim_ || noise.cols() != obs.cols())
    throw ShapeMismatch("policy: noise must be act_dim x batch");
  Sample s;
  const Eigen::MatrixXd out = net.forward(obs, &s.cache);
  s.mean = out.topRows(act_dim_);
  s.log_std_raw = out.bottomRows(act_dim_);
  const double half = 0.5 * (log_std_max_ - log_std_min_);
  s.log_std = (log_std_min_ + half * (s.log_std_raw.array().tanh() + 1.0)).matrix();
  s.noise = noise;
  const Eigen::ArrayXXd u = s.mean.array() + s.log_std.array().exp() * noise.array();
  s.action = u.tanh().matrix();
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
  const Eigen::ArrayXXd per = -0.5 * noise.array().square() - log_norm - s.log_std.array() -
                              (1.0 - s.action.array().square() + kSquashEps).log();
  s.log_prob = per.colwise().sum().matrix();
  return s;
}

Eigen::MatrixXd GaussianPolicy::deterministic(const Eigen::MatrixXd& obs) const {
  return net.forward(obs).topRows(act_dim_).array().tanh().matrix();
}

Eigen::VectorXd GaussianPolicy::backward(const Sample& s, const Eigen::MatrixXd& d_action,
                                         const Eigen::RowVectorXd& d_log_prob) const {
  const Eigen::ArrayXXd a = s.action.array();
  const Eigen::ArrayXXd sigma = s.log_std.array().exp();
  const Eigen::ArrayXXd w_lp = d_log_prob.replicate(act_dim_, 1).array();
  // Total derivative w.r.t. a through the squash correction in log_prob.
  const Eigen::ArrayXXd g_a = d_action.array() + w_lp * 2.0 * a / (1.0 - a.square() + kSquashEps);
  const Eigen::ArrayXXd g_u = g_a * (1.0 - a.square());
  const Eigen::ArrayXXd g_mean = g_u;
  const Eigen::ArrayXXd g_log_std = g_u * sigma * s.noise.array() - w_lp;
  const double half = 0.5 * (log_std_max_ - log_std_min_);
  const Eigen::ArrayXXd g_raw = g_log_std * half * (1.0 - s.log_std_raw.array().tanh().square());
  Eigen::MatrixXd d_out(2 * act_dim_, s.action.cols());
  d_out << g_mean.matrix(), g_raw.matrix();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  net.backward(s.cache, d_out, &grad);
  return grad;
}

SacAgent::SacAgent(int obs_dim, int act_dim, const SacHyperparams& hyper, std::uint64_t seed)
    : policy(obs_dim, act_dim, hyper.hidden, hyper.log_std_min, hyper.log_std_max),
      q1(layer_sizes(obs_dim + act_dim, hyper.hidden, 1)),
      q2(layer_sizes(obs_dim + act_dim, hyper.hidden, 1)),
      hyper_(hyper),
      rng_(splitmix64(seed)) {
  hyper_.validate();
  std::mt19937_64 init(splitmix64(seed ^ 0x5ac5ac5acULL));
  policy.net.initialize(init);
  q1.initialize(init);
  q2.initialize(init);
  q1_target = q1;
  q2_target = q2;
  actor_opt_ = Adam(policy.net.parameter_count(), hyper_.lr_actor);
  q1_opt_ = Adam(q1.parameter_count(), hyper_.lr_critic);
  q2_opt_ = Adam(q2.parameter_count(), hyper_.lr_critic);
  alpha_opt_ = Adam(1, hyper_.lr_actor);
  log_alpha_ = hyper_.alpha > 0.0 ? std::log(hyper_.alpha) : -std::numeric_limits<double>::infinity();
}

Eigen::MatrixXd SacAgent::noise(int rows, int cols) {
  Eigen::MatrixXd n(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) n(i, j) = standard_normal(rng_);
  return n;
}

Eigen::VectorXd SacAgent::act(const Eigen::VectorXd& obs) {
  const Eigen::MatrixXd eps = noise(policy.act_dim(), 1);
  return policy.sample(obs, eps).action.col(0);
}

Eigen::VectorXd SacAgent::act_deterministic(const Eigen::VectorXd& obs) const {
  return policy.deterministic(obs).col(0);
}

Eigen::RowVectorXd SacAgent::critic_targets(const std::vector<const Transition*>& batch,
                                            const Eigen::MatrixXd& next_noise) const {
  const int B = static_cast<int>(batch.size());
  Eigen::MatrixXd next_obs(policy.obs_dim(), B);
  for (int j = 0; j < B; ++j) next_obs.col(j) = batch[j]->next_obs;
  const GaussianPolicy::Sample nxt = policy.sample(next_obs, next_noise);
  const Eigen::MatrixXd in = stack(next_obs, nxt.action);
  const Eigen::RowVectorXd qmin = q1_target.forward(in).cwiseMin(q2_target.forward(in));
  Eigen::RowVectorXd y(B);
  for (int j = 0; j < B; ++j) {
    const double cont = batch[j]->done ? 0.0 : 1.0;
    y[j] = hyper_.reward_scale * batch[j]->reward +
           hyper_.gamma * cont * (qmin[j] - alpha() * nxt.log_prob[j]);
  }
  return y;
}

double SacAgent::actor_objective(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& noise,
                                 Eigen::VectorXd* grad) const {
  const int B = static_cast<int>(obs.cols());
  const GaussianPolicy::Sample s = policy.sample(obs, noise);
  const Eigen::MatrixXd in = stack(obs, s.action);
  Mlp::Cache c1, c2;
  const Eigen::RowVectorXd v1 = q1.forward(in, &c1);
  const Eigen::RowVectorXd v2 = q2.forward(in, &c2);
  const Eigen::RowVectorXd qmin = v1.cwiseMin(v2);
  const double loss = (alpha() * s.log_prob - qmin).mean();
  if (grad) {
    // dQmin/da from whichever critic is smaller per sample.
    Eigen::RowVectorXd sel1(B), sel2(B);
    for (int j = 0; j < B; ++j) {
      sel1[j] = v1[j] <= v2[j] ? -1.0 / B : 0.0;
      sel2[j] = v1[j] <= v2[j] ? 0.0 : -1.0 / B;
    }
    const Eigen::MatrixXd d_in1 = q1.backward(c1, sel1, nullptr);
    const Eigen::MatrixXd d_in2 = q2.backward(c2, sel2, nullptr);
    const Eigen::MatrixXd d_action = (d_in1 + d_in2).bottomRows(policy.act_dim());
    const Eigen::RowVectorXd d_lp = Eigen::RowVectorXd::Constant(B, alpha() / B);
    *grad = policy.backward(s, d_action, d_lp);
  }
  return loss;
}

SacDiagnostics SacAgent::update(const std::vector<const Transition*>& batch) {
  if (batch.empty()) throw ValidationError("sac update needs a non-empty batch");
  const int B = static_cast<int>(batch.size());
  const int od = policy.obs_dim();
  const int ad = policy.act_dim();
  Eigen::MatrixXd obs(od, B), act(ad, B);
  for (int j = 0; j < B; ++j) {
    obs.col(j) = batch[j]->obs;
    act.col(j) = batch[j]->action;
  }
  SacDiagnostics diag;

  const Eigen::RowVectorXd y = critic_targets(batch, noise(ad, B));
  const Eigen::MatrixXd in = stack(obs, act);
  for (int k = 0; k < 2; ++k) {
    Mlp& q = k == 0 ? q1 : q2;
    Mlp::Cache cache;
    const Eigen::RowVectorXd pred = q.forward(in, &cache);
    const Eigen::RowVectorXd err = pred - y;
    diag.critic_loss += 0.5 * err.squaredNorm() / B;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q.parameter_count()));
    q.backward(cache, err / B, &g);
    (k == 0 ? q1_opt_ : q2_opt_).step(q, g);
  }
  diag.critic_loss *= 0.5;

  const Eigen::MatrixXd eps = noise(ad, B);
  Eigen::VectorXd g_actor;
  diag.actor_loss = actor_objective(obs, eps, &g_actor);
  diag.entropy = -policy.sample(obs, eps).log_prob.mean();
  actor_opt_.step(policy.net, g_actor);
  if (hyper_.auto_alpha) {
    // Temperature loss -alpha * (log_prob + target), minimized over log(alpha).
    const double target = hyper_.target_entropy_per_dim * ad;
    Eigen::VectorXd la = Eigen::VectorXd::Constant(1, log_alpha_);
    alpha_opt_.step(la, Eigen::VectorXd::Constant(1, alpha() * (diag.entropy - target)));
    log_alpha_ = la[0];
  }
  diag.alpha = alpha();

  q1_target.blend_from(q1, hyper_.tau);
  q2_target.blend_from(q2, hyper_.tau);
  return diag;
}

}  // namespace mpccbf
