#include "sscf/nn.hpp"

#include <cmath>

namespace sscf::nn {

Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride_,
               std::size_t padding_, bool with_bias, Rng& rng)
    : weight(kaiming_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_) {
  if (with_bias) bias = Tensor::zeros({out_channels}, true);
}

Conv4d::Conv4d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding_, Rng& rng)
    : weight(kaiming_normal({out_channels, in_channels, kernel, kernel, kernel, kernel},
                            in_channels * kernel * kernel * kernel * kernel, rng)),
      bias(Tensor::zeros({out_channels}, true)),
      padding(padding_) {}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)), state(channels) {}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
    : weight(uniform({out_features, in_features}, 1.0 / std::sqrt(static_cast<double>(in_features)), rng)),
      bias(uniform({out_features}, 1.0 / std::sqrt(static_cast<double>(in_features)), rng)) {}

void ParameterSet::add(std::string name, Tensor& tensor) { params_.push_back({std::move(name), &tensor}); }

void ParameterSet::add(const std::string& prefix, Conv2d& conv) {
  add(prefix + ".weight", conv.weight);
  if (conv.bias.defined()) add(prefix + ".bias", conv.bias);
}

void ParameterSet::add(const std::string& prefix, Conv4d& conv) {
  add(prefix + ".weight", conv.weight);
  add(prefix + ".bias", conv.bias);
}

void ParameterSet::add(const std::string& prefix, Linear& layer) {
  add(prefix + ".weight", layer.weight);
  add(prefix + ".bias", layer.bias);
}

void ParameterSet::add(const std::string& prefix, BatchNorm2d& bn) {
  add(prefix + ".gamma", bn.gamma);
  add(prefix + ".beta", bn.beta);
  norms_.push_back({prefix, &bn.state});
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& e : params_) out.push_back(*e.tensor);
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : params_) n += e.tensor->numel();
  return n;
}

void ParameterSet::zero_grad() const {
  for (const auto& e : params_) e.tensor->zero_grad();
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void SgdMomentum::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k] + weight_decay_ * w[k];
      w[k] -= lr * v[k];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double SgdMomentum::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void SgdMomentum::scale_grads(double factor) {
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double& g : p.mutable_grad()) g *= factor;
  }
}

}  // namespace sscf::nn
