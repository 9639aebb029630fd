#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sscf/embedding.hpp"
#include "sscf/nn.hpp"

namespace sscf::losses {

struct LossConfig {
  double lambda = 0.7;
  double tau_c = 0.2;
  std::size_t num_train_classes = 30;

  void validate() const;
};

// Mean over t of cross-entropy(logits_seq[t], labels); logits_seq [T,B,K].
Tensor tet_loss(const Tensor& logits_seq, std::span<const std::size_t> labels);

// Per query: softmax cross-entropy of cosine(prototype_n, query_n) / tau_c
// over the N classes, positive included in the denominator; mean over queries.
Tensor infonce_loss(const EmbeddingSet& embeddings, double tau_c);

// lambda * l_tet + (1 - lambda) * l_info. l_info may be undefined when
// lambda is 1.
Tensor total_loss(const Tensor& l_tet, const Tensor& l_info, double lambda);

// Cosine similarities [Nq,N] between each query and each prototype.
Tensor similarities(const EmbeddingSet& embeddings);

// Per query, the class id of the most similar prototype; ties go to the
// lowest class id.
std::vector<std::size_t> classify_query(const EmbeddingSet& embeddings);

// Fully connected classifier over the spatial mean of F at every time step.
class TetHead {
 public:
  TetHead(std::size_t channels, std::size_t num_classes, nn::Rng& rng);

  // f [T,B,C,H,W] -> logits [T,B,K]
  Tensor logits(const Tensor& f) const;
  void register_parameters(nn::ParameterSet& params, const std::string& prefix = "head");

 private:
  nn::Linear fc_;
};

}  // namespace sscf::losses
