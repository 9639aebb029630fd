#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <typeinfo>

#include <nlohmann/json.hpp>

#include "sscf/checkpoint.hpp"
#include "sscf/cli.hpp"
#include "sscf/ops.hpp"

namespace fs = std::filesystem;

namespace sscf::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t input_channels(const fewshot::Dataset& ds) {
  const auto shape = ds.item_shape();
  return ds.events ? shape.at(1) : shape.at(0);
}

template <typename... Args>
std::string format(const char* pattern, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

}  // namespace

LoadedData load_data(const RunConfig& config) {
  validate(config);
  LoadedData d;
  if (config.data_kind == "synthetic") {
    fewshot::Rng rng(config.data_seed);
    d.dataset =
        fewshot::make_synthetic_glyphs(config.synthetic_classes, config.synthetic_per_class, config.resolution, rng)
            .dataset;
  } else if (config.data_kind == "images") {
    d.dataset = fewshot::load_image_dataset(config.data_path, config.resolution);
  } else {
    d.dataset = fewshot::load_event_dataset(config.data_path);
  }
  d.split = config.split_path.empty()
                ? fewshot::make_split(d.dataset, config.train_classes, config.val_classes, config.test_classes)
                : fewshot::read_split(config.split_path, d.dataset);
  d.split.validate(d.dataset.num_classes());
  return d;
}

std::unique_ptr<fewshot::SscfModel> make_model(const RunConfig& config, const LoadedData& data) {
  const auto mc = model_config(config, input_channels(data.dataset), std::max<std::size_t>(1, data.split.train.size()));
  return std::make_unique<fewshot::SscfModel>(mc, fewshot::derive_seed(config.seed, 1));
}

std::unique_ptr<fewshot::SscfModel> load_model(const RunConfig& config, const LoadedData& data,
                                               const fs::path& checkpoint) {
  auto model = make_model(config, data);
  try {
    load_state(model->parameters(), read_checkpoint(checkpoint));
  } catch (const ShapeError& e) {
    throw ShapeError(checkpoint.string() + " does not match the config: " + e.what());
  } catch (const StateError& e) {
    throw StateError(checkpoint.string() + " does not match the config: " + e.what());
  }
  return model;
}

std::unique_ptr<fewshot::SscfModel> train_model(const RunConfig& config, const LoadedData& data,
                                                const fewshot::MetricsSink& sink) {
  auto model = make_model(config, data);
  fewshot::train(*model, data.dataset, data.split, train_config(config), sink);
  return model;
}

std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("cannot allocate a digest context");
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += format("%02x", md[i]);
  return hex;
}

std::string record_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::ordered_json::parse(serialize(r.config));
  j["weights_sha1"] = r.weights_sha1;
  j["checkpoint"] = r.checkpoint_path;
  j["metrics"] = r.metrics_path;
  j["started_at"] = r.started_at;
  j["finished_at"] = r.finished_at;
  return j.dump(2) + "\n";
}

RunRecord cmd_train(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  RunRecord record;
  record.config = config;
  record.started_at = utc_now();
  const auto data = load_data(config);
  ensure_dir(out_dir);
  write_text(out_dir / "config.json", serialize(config));
  record.metrics_path = (out_dir / "metrics.jsonl").string();
  std::ofstream metrics(record.metrics_path, std::ios::binary);
  if (!metrics) throw IoError("cannot write " + record.metrics_path);

  double window_loss = 0, window_acc = 0;
  std::size_t window = 0;
  auto sink = [&](const fewshot::EpisodeMetrics& m) {
    metrics << fewshot::metrics_json(m) << '\n';
    window_loss += m.loss_total;
    window_acc += m.accuracy;
    ++window;
    if (config.log_every > 0 && (window == config.log_every || m.episode + 1 == config.episodes)) {
      log << format("episode %zu/%zu  loss %.4f  acc %.3f\n", m.episode + 1, config.episodes,
                    window_loss / static_cast<double>(window), window_acc / static_cast<double>(window))
          << std::flush;
      window_loss = window_acc = 0;
      window = 0;
    }
  };
  auto model = train_model(config, data, sink);
  metrics.close();
  if (!metrics) throw IoError("write failed for " + record.metrics_path);

  const std::string weights = encode_checkpoint(collect_state(model->parameters()));
  record.checkpoint_path = (out_dir / "model.ckpt").string();
  write_text(record.checkpoint_path, weights);
  record.weights_sha1 = git_blob_sha1(weights);
  record.finished_at = utc_now();
  write_text(out_dir / "run.json", record_json(record));
  log << "weights " << record.weights_sha1 << " -> " << record.checkpoint_path << "\n";
  return record;
}

fewshot::EvalResult cmd_eval(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir,
                             std::ostream& log) {
  const auto data = load_data(config);
  auto model = load_model(config, data, checkpoint);
  auto ec = eval_config(config);
  ec.threads = fewshot::thread_count_from_env();
  const auto result = fewshot::evaluate(*model, data.dataset, data.split, ec);

  nlohmann::ordered_json j;
  j["n_way"] = ec.n_way;
  j["k_shot"] = ec.k_shot;
  j["q_query"] = ec.q_query;
  j["episodes"] = ec.episodes;
  j["partition"] = ec.partition;
  j["noise_rate"] = ec.noise_rate;
  j["mean"] = result.mean;
  j["ci95"] = result.ci95;
  j["accuracies"] = result.accuracies;
  ensure_dir(out_dir);
  write_text(out_dir / "eval.json", j.dump(2) + "\n");
  log << format("%zu-way %zu-shot accuracy: %.2f ± %.2f %% over %zu episodes\n", ec.n_way, ec.k_shot,
                100.0 * result.mean, 100.0 * result.ci95, ec.episodes);
  return result;
}

energy::EnergyReport cmd_profile_energy(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir,
                                        std::ostream& log) {
  const auto data = load_data(config);
  auto model = load_model(config, data, checkpoint);
  const auto report = energy::energy_report(*model, data.dataset, data.split, eval_config(config), config.probe_episodes);
  ensure_dir(out_dir);
  write_text(out_dir / "energy.json", energy::report_json(report) + "\n");
  const auto table = energy::report_table(report);
  write_text(out_dir / "energy.txt", table);
  log << table;
  return report;
}

void cmd_make_synthetic(const fs::path& out_dir, std::size_t classes, std::size_t per_class, std::size_t resolution,
                        std::uint64_t seed) {
  if (resolution < 16) throw ConfigError("resolution must be >= 16, got " + std::to_string(resolution));
  if (classes == 0 || per_class == 0) throw ConfigError("classes and per_class must be >= 1");
  fewshot::Rng rng(seed);
  const auto glyphs = fewshot::make_synthetic_glyphs(classes, per_class, resolution, rng);
  fewshot::write_image_dataset(out_dir, glyphs.dataset);
}

std::size_t export_embeddings(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir) {
  const auto data = load_data(config);
  auto model = load_model(config, data, checkpoint);
  const auto& ds = data.dataset;
  const auto& classes = data.split.partition(config.eval_partition);
  NoGradGuard guard;

  fewshot::EpisodeInputs base;
  base.events = ds.events;
  std::vector<std::size_t> anchors, items;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto members = ds.items_of(classes[i]);
    if (members.empty()) throw ConfigError("class '" + ds.class_names[classes[i]] + "' has no items");
    anchors.push_back(members.front());
    base.support_class.push_back(i);
    items.insert(items.end(), members.begin(), members.end());
  }
  base.class_ids = classes;
  base.support = fewshot::stack_items(ds, anchors);

  ensure_dir(out_dir);
  std::ofstream csv(out_dir / "embeddings.csv", std::ios::binary);
  if (!csv) throw IoError("cannot write " + (out_dir / "embeddings.csv").string());
  std::size_t rows = 0, width = 0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    const std::vector<std::size_t> chunk(items.begin() + static_cast<std::ptrdiff_t>(start),
                                         items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), start + kChunk)));
    auto inputs = base;
    inputs.query = fewshot::stack_items(ds, chunk);
    inputs.query_labels.clear();
    for (auto item : chunk) inputs.query_labels.push_back(ds.items[item].class_id);
    Tensor features = model->encode(inputs, Mode::eval);
    const auto out = model->embed(features, inputs, Mode::eval);
    const Tensor e = mean(out.embeddings.queries, {1});  // [Nq, C]
    width = e.dim(1);
    if (rows == 0) {
      csv << "class_id,class_name";
      for (std::size_t c = 0; c < width; ++c) csv << ",e" << c;
      csv << '\n';
    }
    const auto v = e.data();
    for (std::size_t q = 0; q < chunk.size(); ++q) {
      const auto cls = ds.items[chunk[q]].class_id;
      csv << cls << ',' << ds.class_names[cls];
      for (std::size_t c = 0; c < width; ++c) csv << ',' << format("%.9g", v[q * width + c]);
      csv << '\n';
      ++rows;
    }
  }
  if (!csv) throw IoError("write failed for " + (out_dir / "embeddings.csv").string());
  return rows;
}

std::size_t export_spike_raster(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_dir,
                                std::size_t items) {
  if (items == 0) throw ConfigError("spike raster needs at least one item");
  const auto data = load_data(config);
  auto model = load_model(config, data, checkpoint);
  const auto& ds = data.dataset;
  const auto& classes = data.split.partition(config.eval_partition);

  // Round-robin over classes: first item of each class, then the second, ...
  std::vector<std::vector<std::size_t>> members;
  for (auto c : classes) members.push_back(ds.items_of(c));
  std::vector<std::size_t> chosen;
  for (std::size_t rank = 0; chosen.size() < items; ++rank) {
    bool any = false;
    for (const auto& m : members) {
      if (rank < m.size() && chosen.size() < items) {
        chosen.push_back(m[rank]);
        any = true;
      }
    }
    if (!any) break;
  }

  NoGradGuard guard;
  ActivityRecorder recorder;
  Tensor f0 = model->encode_backbone(fewshot::stack_items(ds, chosen), ds.events, Mode::eval, &recorder);
  model->sfe().forward({f0}, Mode::eval, &recorder);

  ensure_dir(out_dir);
  std::ofstream counts(out_dir / "spike_counts.csv", std::ios::binary);
  if (!counts) throw IoError("cannot write " + (out_dir / "spike_counts.csv").string());
  counts << "layer,t,spikes,rate\n";
  std::size_t files = 0;
  for (const auto& layer : recorder.layers()) {
    if (!layer.spikes.defined()) continue;
    const auto& s = layer.spikes.shape();  // [T,B,C,H,W]
    const auto T = s[0], B = s[1], C = s[2], H = s[3], W = s[4];
    const auto v = layer.spikes.data();
    const std::size_t scale = std::max<std::size_t>(1, 32 / std::max(H, W));
    const std::size_t tile_w = W * scale, tile_h = H * scale;
    for (std::size_t t = 0; t < T; ++t) {
      fewshot::Image img;
      img.width = B * tile_w + (B - 1);
      img.height = tile_h;
      img.pixels.assign(img.width * img.height, 1.0);
      double total = 0;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) {
            double m = 0;
            for (std::size_t c = 0; c < C; ++c) m += v[(((t * B + b) * C + c) * H + y) * W + x];
            total += m;
            m /= static_cast<double>(C);
            for (std::size_t dy = 0; dy < scale; ++dy) {
              for (std::size_t dx = 0; dx < scale; ++dx) {
                img.pixels[(y * scale + dy) * img.width + b * (tile_w + 1) + x * scale + dx] = m;
              }
            }
          }
        }
      }
      counts << layer.name << ',' << t << ',' << static_cast<std::uint64_t>(total) << ','
             << format("%.6f", total / static_cast<double>(B * C * H * W)) << '\n';
      fewshot::write_pgm(out_dir / ("raster_" + layer.name + "_t" + std::to_string(t) + ".pgm"), img);
      ++files;
    }
  }
  if (!counts) throw IoError("write failed for " + (out_dir / "spike_counts.csv").string());
  return files;
}

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "lambda") return SweepParam::lambda;
  if (name == "noise") return SweepParam::noise;
  if (name == "timesteps") return SweepParam::timesteps;
  throw ConfigError("sweep parameter must be lambda, noise or timesteps, got '" + name + "'");
}

std::string to_string(SweepParam param) {
  switch (param) {
    case SweepParam::lambda: return "lambda";
    case SweepParam::noise: return "noise";
    case SweepParam::timesteps: return "timesteps";
  }
  return "?";
}

std::uint64_t value_seed(double value, std::uint64_t base_seed) {
  return fewshot::derive_seed(base_seed, std::bit_cast<std::uint64_t>(value));
}

std::vector<SweepPoint> run_sweep(const RunConfig& config, SweepParam param, const std::vector<double>& values,
                                  std::size_t seeds, std::ostream& log) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (seeds == 0) throw ConfigError("sweep needs at least one seed");
  // Validate every cell before any training starts.
  for (double v : values) {
    RunConfig c = config;
    if (param == SweepParam::lambda) c.lambda = v;
    if (param == SweepParam::noise) c.noise_rate = v;
    if (param == SweepParam::timesteps) {
      if (!(v >= 1 && v == std::floor(v))) throw ConfigError("timesteps values must be positive integers");
      c.timesteps = static_cast<std::size_t>(v);
    }
    validate(c);
  }
  const auto data = load_data(config);
  std::vector<SweepPoint> points(values.size());
  std::vector<std::vector<double>> pooled(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) points[i].value = values[i];

  auto evaluate = [&](fewshot::SscfModel& model, const RunConfig& c, std::size_t i, std::uint64_t base) {
    auto ec = eval_config(c);
    ec.threads = fewshot::thread_count_from_env();
    const auto r = fewshot::evaluate(model, data.dataset, data.split, ec);
    points[i].accuracy.push_back(r.mean);
    pooled[i].insert(pooled[i].end(), r.accuracies.begin(), r.accuracies.end());
    log << format("%s=%g seed=%llu accuracy %.4f ± %.4f\n", to_string(param).c_str(), values[i],
                  static_cast<unsigned long long>(base), r.mean, r.ci95)
        << std::flush;
  };

  for (std::size_t s = 0; s < seeds; ++s) {
    const auto base = fewshot::derive_seed(config.seed, s);
    if (param == SweepParam::noise) {
      RunConfig c = config;
      c.seed = base;
      auto model = train_model(c, data);
      for (std::size_t i = 0; i < values.size(); ++i) {
        c.noise_rate = values[i];
        evaluate(*model, c, i, base);
      }
      continue;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      RunConfig c = config;
      c.seed = value_seed(values[i], base);
      if (param == SweepParam::lambda) c.lambda = values[i];
      if (param == SweepParam::timesteps) c.timesteps = static_cast<std::size_t>(values[i]);
      auto model = train_model(c, data);
      evaluate(*model, c, i, base);
    }
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto summary = fewshot::summarize(pooled[i]);
    points[i].mean = summary.mean;
    points[i].ci95 = summary.ci95;
  }
  return points;
}

std::string sweep_table(SweepParam param, const std::vector<SweepPoint>& points) {
  std::string out = format("%-10s %10s %8s  per-seed\n", to_string(param).c_str(), "accuracy", "ci95");
  for (const auto& p : points) {
    out += format("%-10g %10.4f %8.4f ", p.value, p.mean, p.ci95);
    for (double a : p.accuracy) out += format(" %.4f", a);
    out += "\n";
  }
  return out;
}

std::string sweep_json(SweepParam param, const std::vector<SweepPoint>& points) {
  nlohmann::ordered_json j;
  j["parameter"] = to_string(param);
  auto rows = nlohmann::ordered_json::array();
  for (const auto& p : points) {
    rows.push_back({{"value", p.value}, {"mean", p.mean}, {"ci95", p.ci95}, {"per_seed", p.accuracy}});
  }
  j["points"] = rows;
  return j.dump(2) + "\n";
}

std::string error_json(const std::exception& error) {
  std::string kind = "error";
  if (dynamic_cast<const ConfigError*>(&error)) kind = "config";
  else if (dynamic_cast<const ShapeError*>(&error)) kind = "shape";
  else if (dynamic_cast<const FormatError*>(&error)) kind = "format";
  else if (dynamic_cast<const IoError*>(&error)) kind = "io";
  else if (dynamic_cast<const StateError*>(&error)) kind = "state";
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = error.what();
  return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

}  // namespace sscf::cli
