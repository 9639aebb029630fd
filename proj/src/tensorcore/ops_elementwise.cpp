#include <cmath>

#include "sscf/ops.hpp"

namespace sscf {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename F>
std::vector<double> map_values(const Tensor& a, F f) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return detail::finish("add", a.shape(), std::move(out), {a, b}, [a, b](const Tensor& o) mutable {
    auto g = o.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return detail::finish("sub", a.shape(), std::move(out), {a, b}, [a, b](const Tensor& o) mutable {
    auto g = o.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return detail::finish("mul", a.shape(), std::move(out), {a, b}, [a, b](const Tensor& o) mutable {
    auto g = o.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto y = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto x = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  return detail::finish("add_scalar", a.shape(), map_values(a, [c](double v) { return v + c; }), {a},
                        [a](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto ga = a.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return detail::finish("mul_scalar", a.shape(), map_values(a, [c](double v) { return v * c; }), {a},
                        [a, c](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto ga = a.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                        });
}

Tensor exp(const Tensor& a) {
  return detail::finish("exp", a.shape(), map_values(a, [](double v) { return std::exp(v); }), {a},
                        [a](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto y = o.data();
                          auto ga = a.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                        });
}

Tensor log(const Tensor& a) {
  return detail::finish("log", a.shape(), map_values(a, [](double v) { return std::log(v); }), {a},
                        [a](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto x = a.data();
                          auto ga = a.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                        });
}

Tensor relu(const Tensor& a) {
  return detail::finish("relu", a.shape(), map_values(a, [](double v) { return v > 0.0 ? v : 0.0; }),
                        {a}, [a](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto x = a.data();
                          auto ga = a.mutable_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (x[i] > 0.0) ga[i] += g[i];
                          }
                        });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  detail::require(x.rank() >= 2, "add_channel_bias: input needs rank >= 2, got " + shape_string(x.shape()));
  const auto channels = x.dim(1);
  detail::require(bias.shape() == Shape{channels},
                  "add_channel_bias: bias " + shape_string(bias.shape()) + " does not match " +
                      std::to_string(channels) + " channels");
  const auto batch = x.dim(0);
  const auto inner = x.numel() / (batch * channels);
  auto in = x.data();
  auto b = bias.data();
  std::vector<double> out(in.begin(), in.end());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* row = out.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) row[i] += b[c];
    }
  }
  return detail::finish("add_channel_bias", x.shape(), std::move(out), {x, bias},
                        [x, bias, batch, channels, inner](const Tensor& o) mutable {
                          auto g = o.grad();
                          if (x.requires_grad()) {
                            auto gx = x.mutable_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                          }
                          if (bias.requires_grad()) {
                            auto gb = bias.mutable_grad();
                            for (std::size_t n = 0; n < batch; ++n) {
                              for (std::size_t c = 0; c < channels; ++c) {
                                const double* row = g.data() + (n * channels + c) * inner;
                                double s = 0.0;
                                for (std::size_t i = 0; i < inner; ++i) s += row[i];
                                gb[c] += s;
                              }
                            }
                          }
                        });
}

}  // namespace sscf
