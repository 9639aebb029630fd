#include "sscf/backbone.hpp"

#include <algorithm>

#include "sscf/ops.hpp"

namespace sscf::backbone {

std::string to_string(Variant variant) { return variant == Variant::scnn ? "scnn" : "vggsnn"; }

Variant parse_variant(const std::string& name) {
  if (name == "scnn") return Variant::scnn;
  if (name == "vggsnn") return Variant::vggsnn;
  throw ConfigError("unknown backbone variant '" + name + "' (expected scnn or vggsnn)");
}

BackboneConfig BackboneConfig::make(Variant variant, std::size_t timesteps, std::size_t in_channels,
                                    std::size_t channel_divisor) {
  if (channel_divisor == 0) throw ConfigError("channel divisor must be >= 1");
  BackboneConfig c;
  c.variant = variant;
  c.timesteps = timesteps;
  c.in_channels = in_channels;
  std::vector<std::size_t> full;
  if (variant == Variant::vggsnn) {
    full = {64, 128, 256, 256, 512, 512, 512, 512};
    c.downsample_blocks = {1, 3, 5};
  } else {
    full = {64, 128, 256, 256};
    c.downsample_blocks = {1, 2, 3};
  }
  for (auto w : full) c.widths.push_back(std::max<std::size_t>(1, w / channel_divisor));
  return c;
}

void BackboneConfig::validate() const {
  if (timesteps == 0) throw ConfigError("backbone needs at least one time step");
  if (in_channels == 0) throw ConfigError("backbone needs at least one input channel");
  if (variant == Variant::vggsnn && widths.size() != 8) {
    throw ConfigError("vggsnn backbone has exactly 8 conv-bn-LIF blocks, got " + std::to_string(widths.size()));
  }
  if (widths.empty()) throw ConfigError("backbone has no blocks");
  for (auto w : widths) {
    if (w == 0) throw ConfigError("backbone block width must be positive");
  }
  for (auto b : downsample_blocks) {
    if (b >= widths.size()) throw ConfigError("downsample block index " + std::to_string(b) + " out of range");
  }
}

std::pair<std::size_t, std::size_t> BackboneConfig::output_spatial(std::size_t height, std::size_t width) const {
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (std::find(downsample_blocks.begin(), downsample_blocks.end(), i) != downsample_blocks.end()) {
      // 3x3 kernel, padding 1, stride 2
      height = (height - 1) / 2 + 1;
      width = (width - 1) / 2 + 1;
    }
  }
  if (height < 2 || width < 2) {
    throw ConfigError("backbone output " + std::to_string(height) + "x" + std::to_string(width) +
                      " is below the 2x2 spatial extent the cross-feature module needs");
  }
  return {height, width};
}

Backbone::Backbone(BackboneConfig config, spiking::LifParams lif, nn::Rng& rng)
    : config_(std::move(config)), lif_(lif) {
  config_.validate();
  lif_.validate();
  std::size_t in = config_.in_channels;
  for (std::size_t i = 0; i < config_.widths.size(); ++i) {
    const bool down =
        std::find(config_.downsample_blocks.begin(), config_.downsample_blocks.end(), i) != config_.downsample_blocks.end();
    Block b{nn::Conv2d(in, config_.widths[i], 3, down ? 2 : 1, 1, false, rng), nn::BatchNorm2d(config_.widths[i])};
    blocks_.push_back(std::move(b));
    in = config_.widths[i];
  }
}

void Backbone::set_timesteps(std::size_t timesteps) {
  if (timesteps == 0) throw ConfigError("backbone needs at least one time step");
  config_.timesteps = timesteps;
}

FeatureMap Backbone::encode_static(const Tensor& images, Mode mode, ActivityRecorder* recorder) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw ShapeError("encode_static: expected [B," + std::to_string(config_.in_channels) + ",H,W] images, got " +
                     shape_string(images.shape()));
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("encode_static: image values must lie in [0,1]");
  }
  config_.output_spatial(images.dim(2), images.dim(3));
  Shape one{1};
  one.insert(one.end(), images.shape().begin(), images.shape().end());
  Tensor frame = reshape(images, one);
  std::vector<Tensor> frames(config_.timesteps, frame);
  return run(concat(frames, 0), mode, recorder, false);
}

FeatureMap Backbone::encode_events(const Tensor& events, Mode mode, ActivityRecorder* recorder) {
  if (events.rank() != 5 || events.dim(2) != config_.in_channels) {
    throw ShapeError("encode_events: expected [T,B," + std::to_string(config_.in_channels) + ",H,W] events, got " +
                     shape_string(events.shape()));
  }
  if (events.dim(0) != config_.timesteps) {
    throw ShapeError("encode_events: sequence has " + std::to_string(events.dim(0)) +
                     " time steps, backbone is configured for " + std::to_string(config_.timesteps));
  }
  bool binary = true;
  for (double v : events.data()) {
    if (v < 0.0) throw ConfigError("encode_events: event values must be nonnegative");
    binary = binary && (v == 0.0 || v == 1.0);
  }
  config_.output_spatial(events.dim(3), events.dim(4));
  return run(events, mode, recorder, binary);
}

FeatureMap Backbone::run(const Tensor& sequence, Mode mode, ActivityRecorder* recorder, bool spiking_input) {
  const auto steps = sequence.dim(0), batch = sequence.dim(1);
  Tensor x = sequence;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& block = blocks_[i];
    const auto& s = x.shape();
    Tensor folded = reshape(x, {steps * batch, s[2], s[3], s[4]});
    Tensor pre = block.conv.forward(folded);
    Tensor normed = block.bn.forward(pre, mode);
    Tensor spikes = spiking::lif_layer(reshape(normed, {steps, batch, pre.dim(1), pre.dim(2), pre.dim(3)}), lif_);
    if (recorder) {
      LayerActivity a;
      a.name = "backbone.block" + std::to_string(i);
      a.layer = {"conv2d", block.conv.in_channels(), block.conv.out_channels(), {3, 3}, {pre.dim(2), pre.dim(3)}};
      a.spiking_input = i > 0 || spiking_input;
      a.per_timestep = true;
      a.timesteps = steps;
      a.samples = batch;
      a.input = x.detach();
      a.pre_activation = reshape(pre, {steps, batch, pre.dim(1), pre.dim(2), pre.dim(3)}).detach();
      a.spikes = spikes.detach();
      recorder->record(std::move(a));
    }
    x = spikes;
  }
  return {x};
}

void Backbone::register_parameters(nn::ParameterSet& params, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto p = prefix + ".block" + std::to_string(i);
    params.add(p + ".conv", blocks_[i].conv);
    params.add(p + ".bn", blocks_[i].bn);
  }
}

}  // namespace sscf::backbone
