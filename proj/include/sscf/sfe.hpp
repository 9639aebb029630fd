#pragma once

#include <cstddef>
#include <string>

#include "sscf/activity.hpp"
#include "sscf/backbone.hpp"
#include "sscf/nn.hpp"
#include "sscf/spiking.hpp"

namespace sscf::sfe {

struct SfeConfig {
  std::size_t channels = 64;
  std::size_t neighborhood = 5;  // U = V; two unpadded 3x3 convs take 5x5 to 1x1
  std::size_t reduction = 4;     // bottleneck width is channels / reduction
  bool enabled = true;           // false: F = F0

  void validate() const;
  std::size_t bottleneck() const { return channels / reduction; }
};

// f0 [T,B,C,H,W] -> [T,B,C,H,W,U,V]:
//   out[t,b,c,x,i,j] = f^[t,b,c,x] * f^[t,b,c,x + (i-U/2, j-V/2)]
// where f^ is f0 with each channel vector scaled to unit L2 norm (zero
// vectors stay zero) and out-of-bounds neighbors are zero.
Tensor self_correlation(const Tensor& f0, std::size_t u, std::size_t v);

class Sfe {
 public:
  Sfe(SfeConfig config, spiking::LifParams lif, nn::Rng& rng);

  // F = F0 + LIF(block(self_correlation(F0))).
  backbone::FeatureMap forward(const backbone::FeatureMap& f0, Mode mode, ActivityRecorder* recorder = nullptr);

  // Bottleneck aggregation of a folded correlation tensor [N,C,H,W,U,V] into
  // the pre-LIF response [N,C,H,W].
  Tensor block(const Tensor& correlation, Mode mode, ActivityRecorder* recorder = nullptr, std::size_t timesteps = 1);

  void zero_block_weights();
  void register_parameters(nn::ParameterSet& params, const std::string& prefix = "sfe");

  const SfeConfig& config() const { return config_; }
  void set_enabled(bool enabled) { config_.enabled = enabled; }

 private:
  SfeConfig config_;
  spiking::LifParams lif_;
  nn::Conv2d reduce_;
  nn::BatchNorm2d reduce_bn_;
  nn::Conv2d conv_a_;
  nn::BatchNorm2d conv_a_bn_;
  nn::Conv2d conv_b_;
  nn::BatchNorm2d conv_b_bn_;
  nn::Conv2d restore_;
  nn::BatchNorm2d restore_bn_;
};

}  // namespace sscf::sfe
