#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sscf/activity.hpp"
#include "sscf/backbone.hpp"
#include "sscf/cfc.hpp"
#include "sscf/data.hpp"
#include "sscf/losses.hpp"
#include "sscf/sfe.hpp"

namespace sscf::fewshot {

struct ModelConfig {
  backbone::Variant variant = backbone::Variant::vggsnn;
  std::size_t timesteps = 2;
  std::size_t in_channels = 1;
  std::size_t channel_divisor = 8;
  spiking::LifParams lif;
  std::size_t compact_channels = 64;
  std::size_t hidden_channels = 16;
  double gamma = 5.0;
  bool use_sfe = true;
  bool use_cfc = true;
  std::size_t num_train_classes = 30;

  void validate() const;
};

// Tensors for one episode, support first.
struct EpisodeInputs {
  Tensor support;  // [Ns,C,H,W] or events [T,Ns,C,H,W]
  Tensor query;
  bool events = false;
  std::vector<std::size_t> support_class;
  std::vector<std::size_t> class_ids;
  std::vector<std::size_t> query_labels;
};

// noise_rate is applied to query items, and to support items unless
// noise_queries_only is set.
EpisodeInputs make_inputs(const Dataset& dataset, const Episode& episode, double noise_rate, bool noise_queries_only,
                          Rng& noise_rng);

class SscfModel {
 public:
  SscfModel(ModelConfig config, std::uint64_t seed);
  SscfModel(const SscfModel&) = delete;
  SscfModel& operator=(const SscfModel&) = delete;

  // Support and query pass through the same weights as one batch.
  // Returns F [T,Ns+Nq,C,H,W].
  Tensor encode(const EpisodeInputs& inputs, Mode mode, ActivityRecorder* recorder = nullptr);
  // Backbone output F0 only, for a static batch [B,C,H,W] or events [T,B,C,H,W].
  Tensor encode_backbone(const Tensor& batch, bool events, Mode mode, ActivityRecorder* recorder = nullptr);

  // Attended embeddings from F (support rows first).
  cfc::CfcOutput embed(const Tensor& features, const EpisodeInputs& inputs, Mode mode,
                       ActivityRecorder* recorder = nullptr);
  Tensor head_logits(const Tensor& features) const { return head_.logits(features); }

  nn::ParameterSet& parameters() { return params_; }
  const ModelConfig& config() const { return config_; }
  backbone::Backbone& backbone() { return backbone_; }
  sfe::Sfe& sfe() { return sfe_; }
  cfc::Cfc& cfc() { return cfc_; }

  // Changes T for subsequent forwards; weights are unaffected.
  void set_timesteps(std::size_t timesteps);

 private:
  ModelConfig config_;
  nn::Rng init_rng_;
  backbone::Backbone backbone_;
  sfe::Sfe sfe_;
  cfc::Cfc cfc_;
  losses::TetHead head_;
  nn::ParameterSet params_;
};

}  // namespace sscf::fewshot
