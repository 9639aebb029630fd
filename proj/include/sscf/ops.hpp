#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sscf/tensor.hpp"

namespace sscf {

// Elementwise. Operands must have identical shapes; there is no implicit
// broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }

// Adds bias[c] to every element of channel c (axis 1) of a rank >= 2 tensor.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);
// Appends `extra` axes, replicating every value across them.
Tensor expand_trailing(const Tensor& x, const Shape& extra);

// Reductions drop the reduced axes; reducing every axis yields shape [1].
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// [B,M,K] x [B,K,N] -> [B,M,N]
Tensor bmm(const Tensor& a, const Tensor& b);
// x [B,in], weight [out,in], optional bias [out] -> [B,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// x [B,C,H,W], weight [Co,C,kh,kw], optional bias [Co].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);

// x [B,C,D1,D2,D3,D4], weight [Co,C,k1,k2,k3,k4], optional bias [Co];
// stride 1, the same zero padding on all four axes.
Tensor conv4d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding);

// x [B,C,H,W] -> [B,C,H,W,u,v] with out[...,x,y,i,j] = x[...,x+i-u/2,y+j-v/2],
// zero outside the image. u and v must be odd.
Tensor unfold(const Tensor& x, std::size_t u, std::size_t v);

enum class Mode { train, eval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization of x [B,C,H,W] over (B,H,W). Train mode uses
// batch statistics and folds them into the running estimates; eval mode uses
// the running estimates and fails if no train step has populated them.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Scales each vector along `axis` to unit L2 norm. All-zero vectors map to
// zero and pass no gradient.
Tensor l2_normalize(const Tensor& x, std::size_t axis);

// Cosine similarity of matching vectors along `axis`; the axis is dropped.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, std::size_t axis);

// Mean over the batch of -log softmax(logits)[label]; logits [B,K].
Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace sscf
