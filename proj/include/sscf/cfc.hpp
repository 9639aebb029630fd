#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "sscf/activity.hpp"
#include "sscf/embedding.hpp"
#include "sscf/nn.hpp"

namespace sscf::cfc {

struct CfcConfig {
  std::size_t in_channels = 64;
  std::size_t compact_channels = 64;  // C'
  std::size_t hidden_channels = 16;   // C1
  double gamma = 5.0;
  bool enabled = true;  // false: uniform attention

  void validate() const;
};

// Joint attention maps, one pair per row: a_q, a_s [P,H,W].
struct AttentionPair {
  Tensor a_q;
  Tensor a_s;
};

// [T,B,C,H,W] -> [B,C,H,W]
Tensor temporal_mean(const Tensor& f);

// Cosine similarity of every query position against every support position
// for all Bq*Bs pairs (query-major): q [Bq,C',H,W], s [Bs,C',H,W] ->
// [Bq*Bs,1,H,W,H,W] with query positions leading. Zero vectors give 0.
Tensor cross_correlation(const Tensor& q, const Tensor& s);

// c [P,H,W,H,W] (query positions leading):
//   a_q(x_q) = mean over x_s of softmax over x_q of c(., x_s) / gamma
//   a_s(x_s) = mean over x_q of softmax over x_s of c(x_q, .) / gamma
AttentionPair attention_maps(const Tensor& c, double gamma);

// f [P,C,H,W], a [P,H,W] -> [P,C], out[p,c] = sum_x f[p,c,x] a[p,x].
Tensor attended_pool(const Tensor& f, const Tensor& a);

struct CfcOutput {
  losses::EmbeddingSet embeddings;
  AttentionPair attention;  // per (query, support image) pair
};

class Cfc {
 public:
  Cfc(CfcConfig config, nn::Rng& rng);

  // Two 4D conv layers with batchnorm + ReLU between; c [P,1,H,W,H,W].
  Tensor refine(const Tensor& c, Mode mode, ActivityRecorder* recorder = nullptr);

  // query, support: temporal-mean features [Nq,C,H,W], [Ns,C,H,W].
  // support_class[j] is the position (0..n_way-1) of support image j's class
  // in class_ids; every class has the same number of shots.
  CfcOutput forward(const Tensor& query, const Tensor& support, std::span<const std::size_t> support_class,
                    std::vector<std::size_t> class_ids, std::vector<std::size_t> query_labels, Mode mode,
                    ActivityRecorder* recorder = nullptr);

  void register_parameters(nn::ParameterSet& params, const std::string& prefix = "cfc");

  const CfcConfig& config() const { return config_; }
  void set_enabled(bool enabled) { config_.enabled = enabled; }
  nn::Conv4d& first_conv() { return conv_a_; }
  nn::Conv4d& second_conv() { return conv_b_; }

 private:
  CfcConfig config_;
  nn::Conv2d compact_;
  nn::Conv4d conv_a_;
  nn::BatchNorm2d conv_a_bn_;
  nn::Conv4d conv_b_;
};

}  // namespace sscf::cfc
