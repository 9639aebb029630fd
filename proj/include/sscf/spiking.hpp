#pragma once

#include "sscf/tensor.hpp"

namespace sscf::spiking {

struct LifParams {
  double tau = 0.5;              // leak factor, (0, 1]
  double v_th = 1.0;             // firing threshold, > 0
  double surrogate_width = 1.0;  // half-support of the triangular surrogate, > 0

  void validate() const;
};

struct LifState {
  Tensor membrane;
};

struct LifStepResult {
  Tensor spikes;
  LifState state;
};

// Triangular stand-in for the Heaviside derivative:
// max(0, 1 - |u - v_th| / width) / width.
double surrogate_derivative(double u_minus_vth, double width);
Tensor surrogate_grad(const Tensor& u_minus_vth, double width);

// Heaviside step S = [h >= v_th] whose backward pass uses the surrogate.
Tensor spike_function(const Tensor& h, const LifParams& params);

// One leaky integrate-and-fire update:
//   H = tau * U + x;  S = [H >= v_th];  U' = H * (1 - S)
// The reset factor (1 - S) is treated as a constant in backward.
LifStepResult lif_step(const LifState& state, const Tensor& x, const LifParams& params);

// Unrolls lif_step over the leading T axis of x_seq, starting from a zero
// membrane. Fused equivalent of chaining lif_step.
Tensor lif_layer(const Tensor& x_seq, const LifParams& params);

}  // namespace sscf::spiking
