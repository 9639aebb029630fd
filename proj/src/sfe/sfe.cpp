#include "sscf/sfe.hpp"

#include "sscf/ops.hpp"

namespace sscf::sfe {

void SfeConfig::validate() const {
  if (neighborhood != 5) {
    throw ConfigError("SFE neighborhood must be 5: two unpadded 3x3 convs reduce it to 1x1, got " +
                      std::to_string(neighborhood));
  }
  if (reduction == 0 || channels < reduction) {
    throw ConfigError("SFE bottleneck needs channels >= reduction, got " + std::to_string(channels) + " / " +
                      std::to_string(reduction));
  }
}

Tensor self_correlation(const Tensor& f0, std::size_t u, std::size_t v) {
  if (u % 2 == 0 || v % 2 == 0) {
    throw ShapeError("self_correlation: neighborhood must be odd, got " + std::to_string(u) + "x" + std::to_string(v));
  }
  if (f0.rank() != 5) throw ShapeError("self_correlation: expected [T,B,C,H,W], got " + shape_string(f0.shape()));
  const auto& s = f0.shape();
  Tensor folded = reshape(f0, {s[0] * s[1], s[2], s[3], s[4]});
  Tensor unit = l2_normalize(folded, 1);
  Tensor corr = mul(expand_trailing(unit, {u, v}), unfold(unit, u, v));
  return reshape(corr, {s[0], s[1], s[2], s[3], s[4], u, v});
}

Sfe::Sfe(SfeConfig config, spiking::LifParams lif, nn::Rng& rng) : config_(config), lif_(lif) {
  config_.validate();
  lif_.validate();
  const auto c = config_.channels, r = config_.bottleneck();
  reduce_ = nn::Conv2d(c, r, 1, 1, 0, false, rng);
  reduce_bn_ = nn::BatchNorm2d(r);
  conv_a_ = nn::Conv2d(r, r, 3, 1, 0, false, rng);
  conv_a_bn_ = nn::BatchNorm2d(r);
  conv_b_ = nn::Conv2d(r, r, 3, 1, 0, false, rng);
  conv_b_bn_ = nn::BatchNorm2d(r);
  restore_ = nn::Conv2d(r, c, 1, 1, 0, false, rng);
  restore_bn_ = nn::BatchNorm2d(c);
}

namespace {

void record_analog(ActivityRecorder* recorder, const std::string& name, LayerDescription layer, std::size_t timesteps,
                   std::size_t samples) {
  if (!recorder) return;
  LayerActivity a;
  a.name = name;
  a.layer = std::move(layer);
  a.spiking_input = false;
  a.per_timestep = true;
  a.timesteps = timesteps;
  a.samples = samples;
  recorder->record(std::move(a));
}

}  // namespace

Tensor Sfe::block(const Tensor& correlation, Mode mode, ActivityRecorder* recorder, std::size_t timesteps) {
  if (correlation.rank() != 6 || correlation.dim(1) != config_.channels) {
    throw ShapeError("sfe block: expected [N," + std::to_string(config_.channels) + ",H,W,U,V], got " +
                     shape_string(correlation.shape()));
  }
  const auto& s = correlation.shape();
  const auto n = s[0], c = s[1], h = s[2], w = s[3], u = s[4], v = s[5];
  const auto r = config_.bottleneck();
  const auto samples = n / timesteps;

  // 1x1 channel reduction over every (x, offset) position.
  Tensor x = reduce_.forward(reshape(correlation, {n, c, h * w * u * v, 1}));
  record_analog(recorder, "sfe.reduce", {"conv2d", c, r, {1, 1}, {h * w * u * v, 1}}, timesteps, samples);
  x = relu(reduce_bn_.forward(x, mode));

  // 3x3 convs over the (U,V) axes, one sample per spatial position.
  x = permute(reshape(x, {n, r, h, w, u, v}), {0, 2, 3, 1, 4, 5});
  x = reshape(x, {n * h * w, r, u, v});
  x = conv_a_.forward(x);
  record_analog(recorder, "sfe.conv_a", {"conv2d", r, r, {3, 3}, {x.dim(2), x.dim(3)}}, timesteps, samples * h * w);
  x = relu(conv_a_bn_.forward(x, mode));
  x = conv_b_.forward(x);
  record_analog(recorder, "sfe.conv_b", {"conv2d", r, r, {3, 3}, {x.dim(2), x.dim(3)}}, timesteps, samples * h * w);
  x = relu(conv_b_bn_.forward(x, mode));
  if (x.dim(2) != 1 || x.dim(3) != 1) {
    throw ShapeError("sfe block: neighborhood did not reduce to 1x1");
  }

  x = permute(reshape(x, {n, h, w, r}), {0, 3, 1, 2});
  x = restore_.forward(x);
  record_analog(recorder, "sfe.restore", {"conv2d", r, c, {1, 1}, {h, w}}, timesteps, samples);
  return restore_bn_.forward(x, mode);
}

backbone::FeatureMap Sfe::forward(const backbone::FeatureMap& f0, Mode mode, ActivityRecorder* recorder) {
  const auto& s = f0.values.shape();
  if (f0.values.rank() != 5 || s[2] != config_.channels) {
    throw ShapeError("sfe: expected [T,B," + std::to_string(config_.channels) + ",H,W], got " + shape_string(s));
  }
  if (!config_.enabled) return f0;
  const auto k = config_.neighborhood;
  Tensor corr = self_correlation(f0.values, k, k);
  record_analog(recorder, "sfe.selfcorr", {"selfcorr", s[2], s[2], {k, k}, {s[3], s[4]}}, s[0], s[1]);
  Tensor folded = reshape(corr, {s[0] * s[1], s[2], s[3], s[4], k, k});
  Tensor pre = block(folded, mode, recorder, s[0]);
  Tensor f1 = spiking::lif_layer(reshape(pre, s), lif_);
  if (recorder) recorder->attach_spikes("sfe.restore", f1.detach());
  return {add(f0.values, f1)};
}

void Sfe::zero_block_weights() {
  for (auto* conv : {&reduce_, &conv_a_, &conv_b_, &restore_}) {
    for (auto& value : conv->weight.mutable_data()) value = 0.0;
  }
}

void Sfe::register_parameters(nn::ParameterSet& params, const std::string& prefix) {
  params.add(prefix + ".reduce", reduce_);
  params.add(prefix + ".reduce_bn", reduce_bn_);
  params.add(prefix + ".conv_a", conv_a_);
  params.add(prefix + ".conv_a_bn", conv_a_bn_);
  params.add(prefix + ".conv_b", conv_b_);
  params.add(prefix + ".conv_b_bn", conv_b_bn_);
  params.add(prefix + ".restore", restore_);
  params.add(prefix + ".restore_bn", restore_bn_);
}

}  // namespace sscf::sfe
