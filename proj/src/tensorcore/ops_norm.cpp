#include <algorithm>
#include <cmath>
#include <limits>

#include "sscf/ops.hpp"

namespace sscf {

namespace {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  detail::require(x.rank() == 4, "batchnorm2d: expected [B,C,H,W], got " + shape_string(x.shape()));
  const auto batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels} || state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw ShapeError("batchnorm2d: parameters do not match " + std::to_string(channels) + " channels of input " +
                     shape_string(x.shape()));
  }
  if (mode == Mode::eval && !state.initialized) {
    throw StateError("batchnorm2d: eval mode requested before any train step populated running statistics");
  }
  const auto count = static_cast<double>(batch * plane);
  auto in = x.data();
  std::vector<double> mu(channels), inv_std(channels);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = in.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = in.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= count;
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased = count > 1 ? v * count / (count - 1) : v;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    state.initialized = true;
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  auto g = gamma.data(), bt = beta.data();
  std::vector<double> out(in.size());
  std::vector<double> xhat(in.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const auto base = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (in[base + i] - mu[c]) * inv_std[c];
        out[base + i] = xhat[base + i] * g[c] + bt[c];
      }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return detail::finish(
      "batchnorm2d", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, plane, count,
       batch_stats](const Tensor& o) mutable {
        auto gout = o.grad();
        auto gm = gamma.data();
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const auto base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g[c] += gout[base + i];
              sum_gx[c] += gout[base + i] * xhat[base + i];
            }
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.mutable_grad();
          for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
        }
        if (beta.requires_grad()) {
          auto gb = beta.mutable_grad();
          for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
        }
        if (!x.requires_grad()) return;
        auto gx = x.mutable_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const auto base = (b * channels + c) * plane;
            const double scale = gm[c] * inv_std[c];
            if (batch_stats) {
              const double mg = sum_g[c] / count, mgx = sum_gx[c] / count;
              for (std::size_t i = 0; i < plane; ++i) {
                gx[base + i] += scale * (gout[base + i] - mg - xhat[base + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) gx[base + i] += scale * gout[base + i];
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x, axis);
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        out[base + k * s.inner] = std::exp(in[base + k * s.inner] - mx);
        z += out[base + k * s.inner];
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  return detail::finish("softmax", x.shape(), std::move(out), {x}, [x, s](const Tensor& o) mutable {
    auto g = o.grad();
    auto y = o.data();
    auto gx = x.mutable_grad();
    for (std::size_t q = 0; q < s.outer; ++q) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const auto base = q * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const auto idx = base + k * s.inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x, axis);
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, in[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(in[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = in[base + k * s.inner] - lse;
    }
  }
  return detail::finish("log_softmax", x.shape(), std::move(out), {x}, [x, s](const Tensor& o) mutable {
    auto g = o.grad();
    auto y = o.data();
    auto gx = x.mutable_grad();
    for (std::size_t q = 0; q < s.outer; ++q) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const auto base = q * s.extent * s.inner + i;
        double gsum = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) gsum += g[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const auto idx = base + k * s.inner;
          gx[idx] += g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    }
  });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis) {
  const auto s = split_at(x, axis);
  auto in = x.data();
  std::vector<double> out(in.size(), 0.0);
  std::vector<double> inv_norm(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto base = o * s.extent * s.inner + i;
      double sq = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) sq += in[base + k * s.inner] * in[base + k * s.inner];
      if (sq == 0.0) continue;
      const double r = 1.0 / std::sqrt(sq);
      inv_norm[o * s.inner + i] = r;
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = in[base + k * s.inner] * r;
    }
  }
  return detail::finish("l2_normalize", x.shape(), std::move(out), {x},
                        [x, s, inv_norm = std::move(inv_norm)](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto y = o.data();
                          auto gx = x.mutable_grad();
                          for (std::size_t q = 0; q < s.outer; ++q) {
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const double r = inv_norm[q * s.inner + i];
                              if (r == 0.0) continue;
                              const auto base = q * s.extent * s.inner + i;
                              double dot = 0.0;
                              for (std::size_t k = 0; k < s.extent; ++k) {
                                dot += g[base + k * s.inner] * y[base + k * s.inner];
                              }
                              for (std::size_t k = 0; k < s.extent; ++k) {
                                const auto idx = base + k * s.inner;
                                gx[idx] += r * (g[idx] - y[idx] * dot);
                              }
                            }
                          }
                        });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cosine_similarity: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  return sum(mul(l2_normalize(a, axis), l2_normalize(b, axis)), {axis});
}

Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  detail::require(logits.rank() == 2, "cross_entropy_with_logits: expected [B,K], got " + shape_string(logits.shape()));
  const auto batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (auto y : labels) {
    if (y >= classes) {
      throw ShapeError("cross_entropy_with_logits: label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
  }
  auto z = logits.data();
  std::vector<double> probs(z.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z.data() + b * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes; ++k) mx = std::max(mx, row[k]);
    double sum_exp = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[b * classes + k] = std::exp(row[k] - mx);
      sum_exp += probs[b * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] /= sum_exp;
    total += mx + std::log(sum_exp) - row[labels[b]];
  }
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return detail::finish("cross_entropy", {1}, {total / static_cast<double>(batch)}, {logits},
                        [logits, probs = std::move(probs), y = std::move(y), batch, classes](const Tensor& o) mutable {
                          const double g = o.grad()[0] / static_cast<double>(batch);
                          auto gl = logits.mutable_grad();
                          for (std::size_t b = 0; b < batch; ++b) {
                            for (std::size_t k = 0; k < classes; ++k) {
                              const double target = k == y[b] ? 1.0 : 0.0;
                              gl[b * classes + k] += g * (probs[b * classes + k] - target);
                            }
                          }
                        });
}

}  // namespace sscf
