#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "sscf/energy.hpp"
#include "sscf/train.hpp"

namespace sscf::cli {

// Every tunable of a run. Serialized as one flat JSON object whose keys are
// the field names below.
struct RunConfig {
  // data
  std::string data_kind = "synthetic";  // synthetic | images | events
  std::string data_path;                // dataset root for images / events
  std::string split_path;               // optional split JSON; otherwise split by count in id order
  std::size_t resolution = 32;
  std::size_t synthetic_classes = 40;
  std::size_t synthetic_per_class = 20;
  std::uint64_t data_seed = 1;
  std::size_t train_classes = 30;
  std::size_t val_classes = 0;
  std::size_t test_classes = 10;

  // model
  std::string variant = "vggsnn";
  std::size_t timesteps = 2;
  double tau = 0.5;
  double v_th = 1.0;
  double surrogate_width = 1.0;
  std::size_t channel_divisor = 8;
  std::size_t compact_channels = 64;
  std::size_t hidden_channels = 16;
  double gamma = 5.0;
  bool use_sfe = true;
  bool use_cfc = true;

  // loss
  double lambda = 0.7;
  double tau_c = 0.2;

  // episodes and optimization
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_query = 5;
  std::size_t episodes = 2000;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 0.0;
  std::uint64_t seed = 1;
  bool timing = false;
  std::size_t log_every = 100;

  // evaluation and profiling
  std::size_t eval_episodes = 200;
  std::uint64_t eval_seed = 7;
  double noise_rate = 0.0;
  bool noise_queries_only = false;
  std::string eval_partition = "test";
  std::size_t probe_episodes = 10;

  bool operator==(const RunConfig&) const = default;
};

// Every violated constraint, empty when valid.
std::vector<std::string> violations(const RunConfig& config);
// ConfigError listing every violation.
void validate(const RunConfig& config);

std::string serialize(const RunConfig& config);
// Unknown keys, wrong types and range violations are all reported together.
RunConfig parse(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
// "key=value", value typed by the key.
void apply_override(RunConfig& config, const std::string& assignment);

fewshot::ModelConfig model_config(const RunConfig& config, std::size_t in_channels, std::size_t num_train_classes);
fewshot::TrainConfig train_config(const RunConfig& config);
fewshot::EvalConfig eval_config(const RunConfig& config);

struct LoadedData {
  fewshot::Dataset dataset;
  fewshot::SplitSpec split;
};
LoadedData load_data(const RunConfig& config);

std::unique_ptr<fewshot::SscfModel> make_model(const RunConfig& config, const LoadedData& data);
// Model built from the config with weights from a checkpoint file.
std::unique_ptr<fewshot::SscfModel> load_model(const RunConfig& config, const LoadedData& data,
                                               const std::filesystem::path& checkpoint);

// Trains a fresh model in memory; no files are written.
std::unique_ptr<fewshot::SscfModel> train_model(const RunConfig& config, const LoadedData& data,
                                                const fewshot::MetricsSink& sink = {});

// SHA-1 over "blob <size>\0" + bytes, as git hashes file contents.
std::string git_blob_sha1(const std::string& bytes);

struct RunRecord {
  RunConfig config;
  std::string weights_sha1;
  std::string metrics_path;
  std::string checkpoint_path;
  std::string started_at;   // UTC, ISO 8601
  std::string finished_at;
};
std::string record_json(const RunRecord& record);

// Trains and writes <out>/config.json, metrics.jsonl, model.ckpt and run.json.
// Progress lines go to `log` every log_every episodes.
RunRecord cmd_train(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

// Prints "accuracy mean ± ci95" and writes <out>/eval.json.
fewshot::EvalResult cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& out_dir, std::ostream& log);

// Writes <out>/energy.json and prints the table.
energy::EnergyReport cmd_profile_energy(const RunConfig& config, const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& out_dir, std::ostream& log);

void cmd_make_synthetic(const std::filesystem::path& out_dir, std::size_t classes, std::size_t per_class,
                        std::size_t resolution, std::uint64_t seed);

// Query-side attended embedding of every item of the eval partition,
// averaged over pairings with the first item of each partition class.
// Writes <out>/embeddings.csv: class_id,class_name,e0..e{C-1}. Returns rows.
std::size_t export_embeddings(const RunConfig& config, const std::filesystem::path& checkpoint,
                              const std::filesystem::path& out_dir);

// For the first `items` eval-partition items (one per class first), writes
// raster_<layer>_t<t>.pgm (one tile per item, channel-mean spike map) for
// every LIF layer and time step, and spike_counts.csv. Returns the number
// of PGM files.
std::size_t export_spike_raster(const RunConfig& config, const std::filesystem::path& checkpoint,
                                const std::filesystem::path& out_dir, std::size_t items);

enum class SweepParam { lambda, noise, timesteps };
SweepParam parse_sweep_param(const std::string& name);
std::string to_string(SweepParam param);

struct SweepPoint {
  double value = 0.0;
  std::vector<double> accuracy;  // one per seed
  double mean = 0.0;
  double ci95 = 0.0;             // over the pooled test episodes of all seeds
};

// Seed of one (value, base seed) cell.
std::uint64_t value_seed(double value, std::uint64_t base_seed);

// Trains and evaluates per value, for seeds derive_seed(config.seed, s),
// s < seeds. lambda and timesteps train one model per value with seed
// value_seed(value, seed); noise trains once per seed and evaluates at each
// rate.
std::vector<SweepPoint> run_sweep(const RunConfig& config, SweepParam param, const std::vector<double>& values,
                                  std::size_t seeds, std::ostream& log);
std::string sweep_table(SweepParam param, const std::vector<SweepPoint>& points);
std::string sweep_json(SweepParam param, const std::vector<SweepPoint>& points);

// Machine-readable error for stderr.
std::string error_json(const std::exception& error);

}  // namespace sscf::cli
