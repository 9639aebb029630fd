#include "sscf/cfc.hpp"

#include "sscf/ops.hpp"

namespace sscf::cfc {

void CfcConfig::validate() const {
  if (in_channels == 0 || compact_channels == 0 || hidden_channels == 0) {
    throw ConfigError("CFC channel counts must be positive");
  }
  if (!(gamma > 0.0)) throw ConfigError("CFC temperature gamma must be positive, got " + std::to_string(gamma));
}

Tensor temporal_mean(const Tensor& f) {
  if (f.rank() != 5) throw ShapeError("temporal_mean: expected [T,B,C,H,W], got " + shape_string(f.shape()));
  return mean(f, {0});
}

Tensor cross_correlation(const Tensor& q, const Tensor& s) {
  if (q.rank() != 4 || s.rank() != 4) {
    throw ShapeError("cross_correlation: expected [B,C,H,W] operands, got " + shape_string(q.shape()) + " and " +
                     shape_string(s.shape()));
  }
  if (q.dim(1) != s.dim(1)) {
    throw ShapeError("cross_correlation: channel mismatch " + std::to_string(q.dim(1)) + " vs " +
                     std::to_string(s.dim(1)));
  }
  if (q.dim(2) != s.dim(2) || q.dim(3) != s.dim(3)) {
    throw ShapeError("cross_correlation: spatial mismatch " + shape_string(q.shape()) + " vs " +
                     shape_string(s.shape()));
  }
  const auto bq = q.dim(0), bs = s.dim(0), c = q.dim(1), h = q.dim(2), w = q.dim(3), hw = h * w;
  Tensor qn = reshape(l2_normalize(q, 1), {bq, c, hw});
  Tensor sn = reshape(l2_normalize(s, 1), {bs, c, hw});
  Tensor rows = reshape(permute(qn, {0, 2, 1}), {bq * hw, c});
  Tensor cols = reshape(permute(sn, {1, 0, 2}), {c, bs * hw});
  Tensor all = reshape(matmul(rows, cols), {bq, hw, bs, hw});
  return reshape(permute(all, {0, 2, 1, 3}), {bq * bs, 1, h, w, h, w});
}

AttentionPair attention_maps(const Tensor& c, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("attention_maps: gamma must be positive");
  if (c.rank() != 5 || c.dim(1) != c.dim(3) || c.dim(2) != c.dim(4)) {
    throw ShapeError("attention_maps: expected [P,H,W,H,W], got " + shape_string(c.shape()));
  }
  const auto p = c.dim(0), h = c.dim(1), w = c.dim(2), hw = h * w;
  Tensor scaled = mul_scalar(reshape(c, {p, hw, hw}), 1.0 / gamma);
  Tensor a_q = mean(softmax(scaled, 1), {2});
  Tensor a_s = mean(softmax(scaled, 2), {1});
  return {reshape(a_q, {p, h, w}), reshape(a_s, {p, h, w})};
}

Tensor attended_pool(const Tensor& f, const Tensor& a) {
  if (f.rank() != 4 || a.rank() != 3 || f.dim(0) != a.dim(0) || f.dim(2) != a.dim(1) || f.dim(3) != a.dim(2)) {
    throw ShapeError("attended_pool: features " + shape_string(f.shape()) + " do not match attention " +
                     shape_string(a.shape()));
  }
  const auto p = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  return reshape(bmm(reshape(f, {p, c, hw}), reshape(a, {p, hw, 1})), {p, c});
}

Cfc::Cfc(CfcConfig config, nn::Rng& rng) : config_(config) {
  config_.validate();
  compact_ = nn::Conv2d(config_.in_channels, config_.compact_channels, 1, 1, 0, true, rng);
  conv_a_ = nn::Conv4d(1, config_.hidden_channels, 3, 1, rng);
  conv_a_bn_ = nn::BatchNorm2d(config_.hidden_channels);
  conv_b_ = nn::Conv4d(config_.hidden_channels, 1, 3, 1, rng);
}

namespace {

void record_analog(ActivityRecorder* recorder, const std::string& name, LayerDescription layer, std::size_t samples) {
  if (!recorder) return;
  LayerActivity a;
  a.name = name;
  a.layer = std::move(layer);
  a.spiking_input = false;
  a.per_timestep = false;
  a.timesteps = 1;
  a.samples = samples;
  recorder->record(std::move(a));
}

}  // namespace

Tensor Cfc::refine(const Tensor& c, Mode mode, ActivityRecorder* recorder) {
  if (c.rank() != 6 || c.dim(1) != 1) throw ShapeError("cfc refine: expected [P,1,H,W,H,W], got " + shape_string(c.shape()));
  const auto p = c.dim(0), h = c.dim(2), w = c.dim(3), c1 = config_.hidden_channels;
  const Shape spatial{h, w, h, w};
  Tensor x = conv_a_.forward(c);
  record_analog(recorder, "cfc.conv4d_a", {"conv4d", 1, c1, {3, 3, 3, 3}, spatial}, p);
  x = relu(conv_a_bn_.forward(reshape(x, {p, c1, h * w, h * w}), mode));
  x = conv_b_.forward(reshape(x, {p, c1, h, w, h, w}));
  record_analog(recorder, "cfc.conv4d_b", {"conv4d", c1, 1, {3, 3, 3, 3}, spatial}, p);
  return x;
}

CfcOutput Cfc::forward(const Tensor& query, const Tensor& support, std::span<const std::size_t> support_class,
                       std::vector<std::size_t> class_ids, std::vector<std::size_t> query_labels, Mode mode,
                       ActivityRecorder* recorder) {
  if (query.rank() != 4 || support.rank() != 4 || query.dim(1) != config_.in_channels ||
      support.dim(1) != config_.in_channels) {
    throw ShapeError("cfc: expected [B," + std::to_string(config_.in_channels) + ",H,W] features, got " +
                     shape_string(query.shape()) + " and " + shape_string(support.shape()));
  }
  const auto nq = query.dim(0), ns = support.dim(0), c = query.dim(1), h = query.dim(2), w = query.dim(3);
  const auto hw = h * w, n_way = class_ids.size(), pairs = nq * ns;
  if (support_class.size() != ns) throw ShapeError("cfc: support_class length does not match support batch");
  if (query_labels.size() != nq) throw ShapeError("cfc: query_labels length does not match query batch");
  std::vector<std::size_t> shots(n_way, 0);
  for (auto k : support_class) {
    if (k >= n_way) throw ShapeError("cfc: support class position out of range");
    ++shots[k];
  }
  for (auto k : shots) {
    if (k == 0 || k != shots[0]) throw ShapeError("cfc: every class needs the same nonzero number of shots");
  }

  AttentionPair attention;
  if (config_.enabled) {
    Tensor cq = compact_.forward(query);
    Tensor cs = compact_.forward(support);
    record_analog(recorder, "cfc.compact", {"conv2d", c, config_.compact_channels, {1, 1}, {h, w}}, nq + ns);
    Tensor corr = cross_correlation(cq, cs);
    record_analog(recorder, "cfc.crosscorr", {"crosscorr", config_.compact_channels, 1, {}, {h, w, h, w}}, pairs);
    Tensor refined = refine(corr, mode, recorder);
    attention = attention_maps(reshape(refined, {pairs, h, w, h, w}), config_.gamma);
  } else {
    Tensor uniform = Tensor::full({pairs, h, w}, 1.0 / static_cast<double>(hw));
    attention = {uniform, uniform};
  }

  std::vector<std::size_t> q_index(pairs), s_index(pairs);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ns; ++j) {
      q_index[i * ns + j] = i;
      s_index[i * ns + j] = j;
    }
  }
  Tensor pooled_q = attended_pool(index_select(query, 0, q_index), attention.a_q);
  Tensor pooled_s = attended_pool(index_select(support, 0, s_index), attention.a_s);
  record_analog(recorder, "cfc.pool_query", {"linear", hw, c, {}, {}}, pairs);
  record_analog(recorder, "cfc.pool_support", {"linear", hw, c, {}, {}}, pairs);

  // Average the K pairings of each (query, class).
  std::vector<double> group(n_way * ns, 0.0);
  for (std::size_t j = 0; j < ns; ++j) group[support_class[j] * ns + j] = 1.0 / static_cast<double>(shots[0]);
  Tensor g(Shape{n_way, ns}, std::move(group));
  auto by_class = [&](const Tensor& pooled) {
    Tensor cols = reshape(permute(reshape(pooled, {nq, ns, c}), {1, 0, 2}), {ns, nq * c});
    return permute(reshape(matmul(g, cols), {n_way, nq, c}), {1, 0, 2});
  };
  losses::EmbeddingSet set{by_class(pooled_s), by_class(pooled_q), std::move(class_ids), std::move(query_labels)};
  return {std::move(set), attention};
}

void Cfc::register_parameters(nn::ParameterSet& params, const std::string& prefix) {
  params.add(prefix + ".compact", compact_);
  params.add(prefix + ".conv4d_a", conv_a_);
  params.add(prefix + ".conv4d_a_bn", conv_a_bn_);
  params.add(prefix + ".conv4d_b", conv_b_);
}

}  // namespace sscf::cfc
