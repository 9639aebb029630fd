#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sscf/ops.hpp"
#include "sscf/tensor.hpp"

namespace sscf::nn {

using Rng = std::mt19937_64;

// Fan-in Kaiming normal: std = sqrt(2 / fan_in).
Tensor kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng);
Tensor uniform(Shape shape, double bound, Rng& rng);

struct Conv2d {
  Tensor weight;  // [Co,C,k,k]
  Tensor bias;    // [Co] or undefined
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }
};

struct Conv4d {
  Tensor weight;  // [Co,C,k,k,k,k]
  Tensor bias;
  std::size_t padding = 1;

  Conv4d() = default;
  Conv4d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv4d(x, weight, bias, padding); }
};

struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, Mode mode) { return batchnorm2d(x, gamma, beta, state, mode); }
};

struct Linear {
  Tensor weight;  // [out,in]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

/// Named view over a model's trainable tensors and normalization state, used
/// by the optimizer and the checkpoint codec.
class ParameterSet {
 public:
  void add(std::string name, Tensor& tensor);
  void add(const std::string& prefix, Conv2d& conv);
  void add(const std::string& prefix, Conv4d& conv);
  void add(const std::string& prefix, Linear& layer);
  void add(const std::string& prefix, BatchNorm2d& bn);

  struct Entry {
    std::string name;
    Tensor* tensor;
  };
  struct NormEntry {
    std::string name;
    BatchNormState* state;
  };

  const std::vector<Entry>& parameters() const { return params_; }
  const std::vector<NormEntry>& norms() const { return norms_; }
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;
  void zero_grad() const;

 private:
  std::vector<Entry> params_;
  std::vector<NormEntry> norms_;
};

class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double momentum, double weight_decay);

  // v <- momentum*v + (g + wd*w); w <- w - lr*v
  void step(double lr);
  void zero_grad();
  double grad_norm() const;
  void scale_grads(double factor);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace sscf::nn
