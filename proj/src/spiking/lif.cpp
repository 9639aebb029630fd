#include <cmath>

#include "sscf/ops.hpp"
#include "sscf/spiking.hpp"

namespace sscf::spiking {

void LifParams::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("LIF tau must lie in (0, 1], got " + std::to_string(tau));
  if (!(v_th > 0.0)) throw ConfigError("LIF threshold must be positive, got " + std::to_string(v_th));
  if (!(surrogate_width > 0.0)) {
    throw ConfigError("LIF surrogate width must be positive, got " + std::to_string(surrogate_width));
  }
}

double surrogate_derivative(double u_minus_vth, double width) {
  const double t = 1.0 - std::abs(u_minus_vth) / width;
  return t > 0.0 ? t / width : 0.0;
}

Tensor surrogate_grad(const Tensor& u_minus_vth, double width) {
  if (!(width > 0.0)) throw ConfigError("surrogate width must be positive");
  auto in = u_minus_vth.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = surrogate_derivative(in[i], width);
  return Tensor(u_minus_vth.shape(), std::move(out));
}

Tensor spike_function(const Tensor& h, const LifParams& params) {
  auto in = h.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= params.v_th ? 1.0 : 0.0;
  return detail::finish("spike", h.shape(), std::move(out), {h}, [h, params](const Tensor& o) mutable {
    auto g = o.grad();
    auto u = h.data();
    auto gh = h.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gh[i] += g[i] * surrogate_derivative(u[i] - params.v_th, params.surrogate_width);
    }
  });
}

LifStepResult lif_step(const LifState& state, const Tensor& x, const LifParams& params) {
  params.validate();
  if (state.membrane.shape() != x.shape()) {
    throw ShapeError("lif_step: membrane " + shape_string(state.membrane.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  Tensor h = add(mul_scalar(state.membrane, params.tau), x);
  Tensor s = spike_function(h, params);
  auto sv = s.data();
  std::vector<double> keep(sv.size());
  for (std::size_t i = 0; i < sv.size(); ++i) keep[i] = 1.0 - sv[i];
  Tensor membrane = mul(h, Tensor(h.shape(), std::move(keep)));
  return {s, LifState{membrane}};
}

Tensor lif_layer(const Tensor& x_seq, const LifParams& params) {
  params.validate();
  if (x_seq.rank() < 1 || x_seq.dim(0) == 0) throw ShapeError("lif_layer: need at least one time step");
  const auto steps = x_seq.dim(0);
  const auto n = x_seq.numel() / steps;
  auto x = x_seq.data();
  // Pre-reset membrane H(t) is kept for the backward pass.
  std::vector<double> pre(x.size());
  std::vector<double> spikes(x.size());
  std::vector<double> u(n, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = t * n + i;
      const double h = params.tau * u[i] + x[k];
      pre[k] = h;
      const double s = h >= params.v_th ? 1.0 : 0.0;
      spikes[k] = s;
      u[i] = h * (1.0 - s);
    }
  }
  return detail::finish("lif_layer", x_seq.shape(), std::move(spikes), {x_seq},
                        [x_seq, params, pre = std::move(pre), steps, n](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto s = o.data();
                          auto gx = x_seq.mutable_grad();
                          // dL/dU(t) carried backward from step t+1.
                          std::vector<double> du(n, 0.0);
                          for (std::size_t t = steps; t-- > 0;) {
                            for (std::size_t i = 0; i < n; ++i) {
                              const auto k = t * n + i;
                              const double dh = g[k] * surrogate_derivative(pre[k] - params.v_th, params.surrogate_width) +
                                                du[i] * (1.0 - s[k]);
                              gx[k] += dh;
                              du[i] = params.tau * dh;
                            }
                          }
                        });
}

}  // namespace sscf::spiking
