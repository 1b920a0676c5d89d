#include "mpccbf/nn.hpp"

#include <cmath>

#include "mpccbf/errors.hpp"
#include "mpccbf/rng.hpp"

namespace mpccbf {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ShapeMismatch("mlp: need at least input and output sizes");
  for (int s : sizes_)
    if (s <= 0) throw ShapeMismatch("mlp: layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights_.push_back(Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]));
    biases_.push_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
  }
}

void Mlp::initialize(std::mt19937_64& rng) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(weights_[l].cols()));
    for (int i = 0; i < weights_[l].rows(); ++i)
      for (int j = 0; j < weights_[l].cols(); ++j) weights_[l](i, j) = uniform(rng, -bound, bound);
    biases_[l].setZero();
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Eigen::VectorXd Mlp::parameters() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (int i = 0; i < weights_[l].rows(); ++i)
      for (int j = 0; j < weights_[l].cols(); ++j) flat[k++] = weights_[l](i, j);
    flat.segment(k, biases_[l].size()) = biases_[l];
    k += biases_[l].size();
  }
  return flat;
}

void Mlp::set_parameters(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count())
    throw ShapeMismatch("mlp: parameter vector has the wrong length");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (int i = 0; i < weights_[l].rows(); ++i)
      for (int j = 0; j < weights_[l].cols(); ++j) weights_[l](i, j) = flat[k++];
    biases_[l] = flat.segment(k, biases_[l].size());
    k += biases_[l].size();
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (weights_.empty()) throw ShapeMismatch("mlp: network has no layers");
  if (x.rows() != input_size()) throw ShapeMismatch("mlp: input has the wrong number of rows");
  if (cache) cache->inputs.clear();
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (cache) cache->inputs.push_back(a);
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    a = l + 1 < weights_.size() ? Eigen::MatrixXd(z.array().tanh()) : z;
  }
  if (cache) cache->output = a;
  return a;
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_out, Eigen::VectorXd* grad) const {
  const int L = num_layers();
  if (static_cast<int>(cache.inputs.size()) != L) throw ShapeMismatch("mlp: cache does not match network");
  if (d_out.rows() != output_size() || d_out.cols() != cache.output.cols())
    throw ShapeMismatch("mlp: upstream gradient has the wrong shape");
  if (grad && static_cast<std::size_t>(grad->size()) != parameter_count())
    throw ShapeMismatch("mlp: gradient buffer has the wrong length");

  std::vector<Eigen::Index> offset(L);
  Eigen::Index k = 0;
  for (int l = 0; l < L; ++l) {
    offset[l] = k;
    k += weights_[l].size() + biases_[l].size();
  }

  Eigen::MatrixXd delta = d_out;  // dL/dz of the current layer
  for (int l = L - 1; l >= 0; --l) {
    const Eigen::MatrixXd& a_in = cache.inputs[l];
    if (grad) {
      const Eigen::MatrixXd gW = delta * a_in.transpose();
      Eigen::Index p = offset[l];
      for (int i = 0; i < gW.rows(); ++i)
        for (int j = 0; j < gW.cols(); ++j) (*grad)[p++] += gW(i, j);
      grad->segment(p, biases_[l].size()) += delta.rowwise().sum();
    }
    Eigen::MatrixXd d_in = weights_[l].transpose() * delta;
    if (l > 0) d_in.array() *= 1.0 - a_in.array().square();  // a_in = tanh(z_{l-1})
    delta = std::move(d_in);
  }
  return delta;
}

void Mlp::blend_from(const Mlp& other, double tau) {
  if (other.sizes_ != sizes_) throw ShapeMismatch("mlp: blend between different architectures");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l] = tau * other.weights_[l] + (1.0 - tau) * weights_[l];
    biases_[l] = tau * other.biases_[l] + (1.0 - tau) * biases_[l];
  }
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || params.size() != m_.size())
    throw ShapeMismatch("adam: size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void Adam::step(Mlp& net, const Eigen::VectorXd& grad) {
  Eigen::VectorXd p = net.parameters();
  step(p, grad);
  net.set_parameters(p);
}

}  // namespace mpccbf
