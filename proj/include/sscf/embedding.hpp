#pragma once

#include <cstddef>
#include <vector>

#include "sscf/tensor.hpp"

namespace sscf::losses {

// Attended embeddings of one episode. Attention is computed per
// (query, support) pair, so a query's embedding depends on the class it is
// compared against: queries[i,n] is query i pooled under its attention
// against class n, prototypes[i,n] is class n's support pooled under the
// same pairing.
struct EmbeddingSet {
  Tensor prototypes;                  // [Nq,N,C]
  Tensor queries;                     // [Nq,N,C]
  std::vector<std::size_t> class_ids;     // N distinct ids, in prototype order
  std::vector<std::size_t> query_labels;  // Nq ids, each among class_ids

  // Pair-independent embeddings: prototypes [N,C], queries [Nq,C].
  static EmbeddingSet shared(const Tensor& prototypes, const Tensor& queries, std::vector<std::size_t> class_ids,
                             std::vector<std::size_t> query_labels);

  std::size_t num_queries() const { return prototypes.dim(0); }
  std::size_t num_classes() const { return prototypes.dim(1); }
  void validate() const;
};

}  // namespace sscf::losses
