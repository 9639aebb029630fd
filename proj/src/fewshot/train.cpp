#include "sscf/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include <nlohmann/json.hpp>

#include "sscf/ops.hpp"

namespace sscf::fewshot {

void TrainConfig::validate() const {
  if (n_way == 0 || k_shot == 0 || q_query == 0) throw ConfigError("n_way, k_shot and q_query must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be nonnegative");
  losses::LossConfig{lambda, tau_c, 1}.validate();
}

void EvalConfig::validate() const {
  if (n_way == 0 || k_shot == 0 || q_query == 0) throw ConfigError("n_way, k_shot and q_query must be >= 1");
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  NoiseSpec{noise_rate, 0}.validate();
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

std::string metrics_json(const EpisodeMetrics& m) {
  nlohmann::ordered_json j;
  j["episode"] = m.episode;
  j["loss_tet"] = m.loss_tet;
  j["loss_info"] = m.loss_info;
  j["loss_total"] = m.loss_total;
  j["accuracy"] = m.accuracy;
  j["elapsed_ms"] = m.elapsed_ms ? nlohmann::ordered_json(*m.elapsed_ms) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total <= 1) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

namespace {

double query_accuracy(const losses::EmbeddingSet& embeddings) {
  const auto predicted = losses::classify_query(embeddings);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == embeddings.query_labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

}  // namespace

EpisodeMetrics train_step(SscfModel& model, nn::SgdMomentum& optimizer, const EpisodeInputs& inputs,
                          const std::vector<std::size_t>& head_labels, const TrainConfig& config, double lr) {
  Tensor features = model.encode(inputs, Mode::train);
  Tensor l_tet = losses::tet_loss(model.head_logits(features), head_labels);
  cfc::CfcOutput out;
  Tensor l_info;
  if (config.lambda < 1.0) {
    out = model.embed(features, inputs, Mode::train);
    l_info = losses::infonce_loss(out.embeddings, config.tau_c);
  } else {
    // Reported only; the loss is TET alone.
    NoGradGuard guard;
    out = model.embed(features, inputs, Mode::train);
    l_info = losses::infonce_loss(out.embeddings, config.tau_c);
  }
  Tensor total = losses::total_loss(l_tet, l_info, config.lambda);
  if (!std::isfinite(total.item())) {
    Tape::current().reset();
    throw Error("non-finite training loss (tet " + std::to_string(l_tet.item()) + ", info " +
                std::to_string(l_info.item()) + ")");
  }
  EpisodeMetrics m;
  m.loss_tet = l_tet.item();
  m.loss_info = l_info.item();
  m.loss_total = total.item();
  m.accuracy = query_accuracy(out.embeddings);
  backward(total);
  if (config.grad_clip > 0.0) {
    const double norm = optimizer.grad_norm();
    if (norm > config.grad_clip) optimizer.scale_grads(config.grad_clip / norm);
  }
  optimizer.step(lr);
  optimizer.zero_grad();
  return m;
}

std::vector<EpisodeMetrics> train(SscfModel& model, const Dataset& dataset, const SplitSpec& split,
                                  const TrainConfig& config, const MetricsSink& sink, const EpisodeSource& source) {
  config.validate();
  split.validate(dataset.num_classes());
  if (split.train.size() > model.config().num_train_classes) {
    throw ConfigError("train partition has " + std::to_string(split.train.size()) + " classes, head has " +
                      std::to_string(model.config().num_train_classes));
  }
  nn::SgdMomentum optimizer(model.parameters().tensors(), config.momentum, config.weight_decay);
  optimizer.zero_grad();
  Rng rng(derive_seed(config.seed, 0));
  Rng unused_noise(0);
  std::vector<EpisodeMetrics> history;
  for (std::size_t e = 0; e < config.episodes; ++e) {
    const auto start = std::chrono::steady_clock::now();
    Episode ep = source ? source(e, rng)
                        : sample_episode(dataset, split.train, config.n_way, config.k_shot, config.q_query, rng);
    ep.validate(dataset);
    EpisodeInputs inputs = make_inputs(dataset, ep, 0.0, false, unused_noise);
    std::vector<std::size_t> head_labels;
    for (const auto* part : {&ep.support, &ep.query}) {
      for (auto item : *part) {
        const auto cls = dataset.items[item].class_id;
        const auto it = std::find(split.train.begin(), split.train.end(), cls);
        if (it == split.train.end()) {
          throw ConfigError("training episode uses class '" + dataset.class_names[cls] + "' outside the train split");
        }
        head_labels.push_back(static_cast<std::size_t>(it - split.train.begin()));
      }
    }
    EpisodeMetrics m;
    try {
      m = train_step(model, optimizer, inputs, head_labels, config, cosine_lr(config.lr, e, config.episodes));
    } catch (const Error& err) {
      throw Error("episode " + std::to_string(e) + ": " + err.what());
    }
    m.episode = e;
    if (config.timing) {
      m.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    if (sink) sink(m);
    history.push_back(m);
  }
  return history;
}

EvalResult summarize(std::vector<double> accuracies) {
  EvalResult r;
  const auto n = static_cast<double>(accuracies.size());
  if (accuracies.empty()) return r;
  double sum = 0;
  for (double a : accuracies) sum += a;
  r.mean = sum / n;
  if (accuracies.size() > 1) {
    double ss = 0;
    for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n);
  }
  r.accuracies = std::move(accuracies);
  return r;
}

EvalResult evaluate(SscfModel& model, const Dataset& dataset, const SplitSpec& split, const EvalConfig& config) {
  config.validate();
  split.validate(dataset.num_classes());
  const auto& classes = split.partition(config.partition);
  std::vector<double> accuracies(config.episodes, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    NoGradGuard guard;
    for (std::size_t i = next++; i < config.episodes && !failed; i = next++) {
      try {
        Rng rng(derive_seed(config.seed, i));
        Episode ep = sample_episode(dataset, classes, config.n_way, config.k_shot, config.q_query, rng);
        EpisodeInputs inputs = make_inputs(dataset, ep, config.noise_rate, config.noise_queries_only, rng);
        Tensor features = model.encode(inputs, Mode::eval);
        auto out = model.embed(features, inputs, Mode::eval);
        accuracies[i] = query_accuracy(out.embeddings);
      } catch (...) {
        if (!failed.exchange(true)) failure = std::current_exception();
      }
    }
  };
  const auto threads = std::min(config.threads, config.episodes);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return summarize(std::move(accuracies));
}

void calibrate_batchnorm(SscfModel& model, const Dataset& dataset, const std::vector<std::size_t>& classes,
                         const EvalConfig& config, std::size_t episodes) {
  NoGradGuard guard;
  Rng rng(derive_seed(config.seed, 0xCA11B));
  const auto& norms = model.parameters().norms();
  std::vector<double> saved;
  for (const auto& n : norms) saved.push_back(n.state->momentum);
  for (std::size_t e = 0; e < episodes; ++e) {
    // cumulative average over the calibration batches
    for (const auto& n : norms) n.state->momentum = 1.0 / static_cast<double>(e + 1);
    Episode ep = sample_episode(dataset, classes, config.n_way, config.k_shot, config.q_query, rng);
    EpisodeInputs inputs = make_inputs(dataset, ep, config.noise_rate, config.noise_queries_only, rng);
    Tensor features = model.encode(inputs, Mode::train);
    model.embed(features, inputs, Mode::train);
  }
  for (std::size_t i = 0; i < norms.size(); ++i) norms[i].state->momentum = saved[i];
}

std::size_t thread_count_from_env() {
  const char* v = std::getenv("SSCF_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("SSCF_THREADS must be a positive integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace sscf::fewshot
