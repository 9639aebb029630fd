#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sscf/activity.hpp"
#include "sscf/nn.hpp"
#include "sscf/spiking.hpp"

namespace sscf::backbone {

enum class Variant { scnn, vggsnn };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& name);

struct BackboneConfig {
  Variant variant = Variant::vggsnn;
  std::size_t timesteps = 2;
  std::size_t in_channels = 1;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> downsample_blocks;  // 0-based indices of stride-2 blocks

  // vggsnn: 8 blocks, widths (64,128,256,256,512,512,512,512)/divisor,
  //         stride 2 at blocks 1,3,5.
  // scnn:   4 blocks, widths (64,128,256,256)/divisor, stride 2 at blocks 1,2,3.
  static BackboneConfig make(Variant variant, std::size_t timesteps, std::size_t in_channels,
                             std::size_t channel_divisor);

  void validate() const;
  std::size_t out_channels() const { return widths.back(); }
  // Spatial extent after the stack; ConfigError when smaller than 2x2.
  std::pair<std::size_t, std::size_t> output_spatial(std::size_t height, std::size_t width) const;
};

// Spike features [T,B,C,H,W].
struct FeatureMap {
  Tensor values;
};

class Backbone {
 public:
  Backbone(BackboneConfig config, spiking::LifParams lif, nn::Rng& rng);

  // Replicates static images [B,C,H,W] (values in [0,1]) over T steps.
  FeatureMap encode_static(const Tensor& images, Mode mode, ActivityRecorder* recorder = nullptr);
  // Native event sequences [T,B,C,H,W]; T must match the configuration.
  FeatureMap encode_events(const Tensor& events, Mode mode, ActivityRecorder* recorder = nullptr);

  void register_parameters(nn::ParameterSet& params, const std::string& prefix = "backbone");

  const BackboneConfig& config() const { return config_; }
  // The time-step count is not a weight; a trained stack runs at any T.
  void set_timesteps(std::size_t timesteps);

 private:
  struct Block {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
  };

  FeatureMap run(const Tensor& sequence, Mode mode, ActivityRecorder* recorder, bool spiking_input);

  BackboneConfig config_;
  spiking::LifParams lif_;
  std::vector<Block> blocks_;
};

}  // namespace sscf::backbone
