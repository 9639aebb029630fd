#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sscf/model.hpp"

namespace sscf::fewshot {

struct TrainConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_query = 5;
  std::size_t episodes = 2000;
  double lr = 0.05;  // cosine-decayed to 0 over the run
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 0.0;  // global norm; 0 disables
  double lambda = 0.7;
  double tau_c = 0.2;
  std::uint64_t seed = 1;
  bool timing = false;  // fill elapsed_ms (makes the stream nondeterministic)

  void validate() const;
};

struct EpisodeMetrics {
  std::size_t episode = 0;
  double loss_tet = 0.0;
  double loss_info = 0.0;
  double loss_total = 0.0;
  double accuracy = 0.0;
  std::optional<double> elapsed_ms;
};

// One JSON object, no trailing newline.
std::string metrics_json(const EpisodeMetrics& m);

using MetricsSink = std::function<void(const EpisodeMetrics&)>;
// Supplies the episode for a training step; defaults to sampling the train
// partition with the training rng.
using EpisodeSource = std::function<Episode(std::size_t index, Rng& rng)>;

// Derives an independent stream seed from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

double cosine_lr(double base, std::size_t step, std::size_t total);

// One training step; returns its metrics (episode index left at 0).
EpisodeMetrics train_step(SscfModel& model, nn::SgdMomentum& optimizer, const EpisodeInputs& inputs,
                          const std::vector<std::size_t>& head_labels, const TrainConfig& config, double lr);

std::vector<EpisodeMetrics> train(SscfModel& model, const Dataset& dataset, const SplitSpec& split,
                                  const TrainConfig& config, const MetricsSink& sink = {},
                                  const EpisodeSource& source = {});

struct EvalConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_query = 5;
  std::size_t episodes = 200;
  std::uint64_t seed = 7;
  double noise_rate = 0.0;
  bool noise_queries_only = false;
  std::string partition = "test";
  std::size_t threads = 1;

  void validate() const;
};

struct EvalResult {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * standard error
  std::vector<double> accuracies;
};

EvalResult summarize(std::vector<double> accuracies);

// Eval-mode forward without gradients; episode i draws from
// Rng(derive_seed(seed, i)) so results do not depend on thread count.
EvalResult evaluate(SscfModel& model, const Dataset& dataset, const SplitSpec& split, const EvalConfig& config);

// Sets batchnorm running statistics to the average of train-mode batch
// statistics over `episodes` forwards (no gradients, no weight change) so an
// untrained model can run in eval mode.
void calibrate_batchnorm(SscfModel& model, const Dataset& dataset, const std::vector<std::size_t>& classes,
                         const EvalConfig& config, std::size_t episodes);

// Worker count from SSCF_THREADS, default 1.
std::size_t thread_count_from_env();

}  // namespace sscf::fewshot
