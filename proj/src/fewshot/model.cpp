#include "sscf/model.hpp"

#include "sscf/ops.hpp"

namespace sscf::fewshot {

void ModelConfig::validate() const {
  backbone::BackboneConfig::make(variant, timesteps, in_channels, channel_divisor).validate();
  lif.validate();
  if (num_train_classes == 0) throw ConfigError("num_train_classes must be positive");
  cfc::CfcConfig{64, compact_channels, hidden_channels, gamma, use_cfc}.validate();
}

EpisodeInputs make_inputs(const Dataset& dataset, const Episode& episode, double noise_rate, bool noise_queries_only,
                          Rng& noise_rng) {
  EpisodeInputs in;
  in.events = dataset.events;
  in.support = stack_items(dataset, episode.support);
  in.query = stack_items(dataset, episode.query);
  if (noise_rate > 0.0) {
    if (!noise_queries_only) in.support = add_gaussian_noise(in.support, noise_rate, noise_rng);
    in.query = add_gaussian_noise(in.query, noise_rate, noise_rng);
  }
  in.support_class = episode.support_class;
  in.class_ids = episode.class_ids;
  in.query_labels = episode.query_labels;
  return in;
}

namespace {

backbone::BackboneConfig backbone_config(const ModelConfig& c) {
  c.validate();
  return backbone::BackboneConfig::make(c.variant, c.timesteps, c.in_channels, c.channel_divisor);
}

}  // namespace

SscfModel::SscfModel(ModelConfig config, std::uint64_t seed)
    : config_(config),
      init_rng_(seed),
      backbone_(backbone_config(config_), config_.lif, init_rng_),
      sfe_(sfe::SfeConfig{backbone_.config().out_channels(), 5, 4, config_.use_sfe}, config_.lif, init_rng_),
      cfc_(cfc::CfcConfig{backbone_.config().out_channels(), config_.compact_channels, config_.hidden_channels,
                          config_.gamma, config_.use_cfc},
           init_rng_),
      head_(backbone_.config().out_channels(), config_.num_train_classes, init_rng_) {
  backbone_.register_parameters(params_);
  sfe_.register_parameters(params_);
  cfc_.register_parameters(params_);
  head_.register_parameters(params_);
}

void SscfModel::set_timesteps(std::size_t timesteps) {
  backbone_.set_timesteps(timesteps);
  config_.timesteps = timesteps;
}

Tensor SscfModel::encode_backbone(const Tensor& batch, bool events, Mode mode, ActivityRecorder* recorder) {
  return events ? backbone_.encode_events(batch, mode, recorder).values
                : backbone_.encode_static(batch, mode, recorder).values;
}

Tensor SscfModel::encode(const EpisodeInputs& inputs, Mode mode, ActivityRecorder* recorder) {
  const Tensor parts[] = {inputs.support, inputs.query};
  Tensor batch = concat(parts, inputs.events ? 1 : 0);
  Tensor f0 = encode_backbone(batch, inputs.events, mode, recorder);
  return sfe_.forward({f0}, mode, recorder).values;
}

cfc::CfcOutput SscfModel::embed(const Tensor& features, const EpisodeInputs& inputs, Mode mode,
                                ActivityRecorder* recorder) {
  const auto ns = inputs.support_class.size(), nq = inputs.query_labels.size();
  if (features.rank() != 5 || features.dim(1) != ns + nq) {
    throw ShapeError("embed: features " + shape_string(features.shape()) + " do not cover " + std::to_string(ns) +
                     " support and " + std::to_string(nq) + " query items");
  }
  Tensor pooled = cfc::temporal_mean(features);
  Tensor support = slice(pooled, 0, 0, ns);
  Tensor query = slice(pooled, 0, ns, nq);
  return cfc_.forward(query, support, inputs.support_class, inputs.class_ids, inputs.query_labels, mode, recorder);
}

}  // namespace sscf::fewshot
