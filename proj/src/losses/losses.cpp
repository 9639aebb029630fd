#include "sscf/losses.hpp"

#include <algorithm>
#include <set>

#include "sscf/ops.hpp"

namespace sscf::losses {

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1], got " + std::to_string(lambda));
  if (!(tau_c > 0.0)) throw ConfigError("tau_c must be positive, got " + std::to_string(tau_c));
  if (num_train_classes == 0) throw ConfigError("num_train_classes must be positive");
}

EmbeddingSet EmbeddingSet::shared(const Tensor& prototypes, const Tensor& queries, std::vector<std::size_t> class_ids,
                                  std::vector<std::size_t> query_labels) {
  if (prototypes.rank() != 2 || queries.rank() != 2 || prototypes.dim(1) != queries.dim(1)) {
    throw ShapeError("EmbeddingSet::shared: expected prototypes [N,C] and queries [Nq,C], got " +
                     shape_string(prototypes.shape()) + " and " + shape_string(queries.shape()));
  }
  const auto n = prototypes.dim(0), nq = queries.dim(0), c = prototypes.dim(1);
  std::vector<std::size_t> zeros_q(nq, 0), zeros_n(n, 0);
  EmbeddingSet set;
  set.prototypes = index_select(reshape(prototypes, {1, n, c}), 0, zeros_q);
  set.queries = index_select(reshape(queries, {nq, 1, c}), 1, zeros_n);
  set.class_ids = std::move(class_ids);
  set.query_labels = std::move(query_labels);
  set.validate();
  return set;
}

void EmbeddingSet::validate() const {
  if (prototypes.rank() != 3 || prototypes.shape() != queries.shape()) {
    throw ShapeError("EmbeddingSet: prototypes " + shape_string(prototypes.shape()) + " and queries " +
                     shape_string(queries.shape()) + " must both be [Nq,N,C]");
  }
  if (class_ids.size() != prototypes.dim(1)) throw ShapeError("EmbeddingSet: class_ids length does not match N");
  if (query_labels.size() != prototypes.dim(0)) throw ShapeError("EmbeddingSet: query_labels length does not match Nq");
  if (std::set<std::size_t>(class_ids.begin(), class_ids.end()).size() != class_ids.size()) {
    throw ShapeError("EmbeddingSet: prototype class ids must be distinct");
  }
}

Tensor tet_loss(const Tensor& logits_seq, std::span<const std::size_t> labels) {
  if (logits_seq.rank() != 3) throw ShapeError("tet_loss: expected [T,B,K] logits, got " + shape_string(logits_seq.shape()));
  const auto steps = logits_seq.dim(0), batch = logits_seq.dim(1), classes = logits_seq.dim(2);
  if (labels.size() != batch) throw ShapeError("tet_loss: label count does not match batch");
  Tensor total;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor ce = cross_entropy_with_logits(reshape(slice(logits_seq, 0, t, 1), {batch, classes}), labels);
    total = total.defined() ? add(total, ce) : ce;
  }
  return mul_scalar(total, 1.0 / static_cast<double>(steps));
}

Tensor similarities(const EmbeddingSet& embeddings) {
  embeddings.validate();
  return cosine_similarity(embeddings.prototypes, embeddings.queries, 2);
}

Tensor infonce_loss(const EmbeddingSet& embeddings, double tau_c) {
  if (!(tau_c > 0.0)) throw ConfigError("infonce_loss: tau_c must be positive");
  embeddings.validate();
  std::vector<std::size_t> positive;
  for (auto label : embeddings.query_labels) {
    auto it = std::find(embeddings.class_ids.begin(), embeddings.class_ids.end(), label);
    if (it == embeddings.class_ids.end()) {
      throw ShapeError("infonce_loss: query class " + std::to_string(label) + " has no prototype");
    }
    positive.push_back(static_cast<std::size_t>(it - embeddings.class_ids.begin()));
  }
  return cross_entropy_with_logits(mul_scalar(similarities(embeddings), 1.0 / tau_c), positive);
}

Tensor total_loss(const Tensor& l_tet, const Tensor& l_info, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("total_loss: lambda must lie in [0,1]");
  if (lambda == 1.0) return l_tet;
  if (lambda == 0.0) return l_info;
  return add(mul_scalar(l_tet, lambda), mul_scalar(l_info, 1.0 - lambda));
}

std::vector<std::size_t> classify_query(const EmbeddingSet& embeddings) {
  Tensor sim = similarities(embeddings);
  const auto nq = sim.dim(0), n = sim.dim(1);
  auto values = sim.data();
  std::vector<std::size_t> predicted(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < n; ++k) {
      const double a = values[i * n + k], b = values[i * n + best];
      if (a > b || (a == b && embeddings.class_ids[k] < embeddings.class_ids[best])) best = k;
    }
    predicted[i] = embeddings.class_ids[best];
  }
  return predicted;
}

TetHead::TetHead(std::size_t channels, std::size_t num_classes, nn::Rng& rng) : fc_(channels, num_classes, rng) {}

Tensor TetHead::logits(const Tensor& f) const {
  if (f.rank() != 5) throw ShapeError("tet head: expected [T,B,C,H,W], got " + shape_string(f.shape()));
  const auto steps = f.dim(0), batch = f.dim(1), c = f.dim(2);
  Tensor pooled = reshape(mean(f, {3, 4}), {steps * batch, c});
  Tensor out = fc_.forward(pooled);
  return reshape(out, {steps, batch, out.dim(1)});
}

void TetHead::register_parameters(nn::ParameterSet& params, const std::string& prefix) {
  params.add(prefix + ".fc", fc_);
}

}  // namespace sscf::losses
