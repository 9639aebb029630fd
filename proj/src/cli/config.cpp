#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <variant>

#include <nlohmann/json.hpp>

#include "sscf/cli.hpp"

namespace sscf::cli {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "count fields share one representation");

using Member = std::variant<std::string RunConfig::*, std::size_t RunConfig::*, double RunConfig::*,
                            bool RunConfig::*>;

struct Field {
  const char* name;
  Member member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"data_kind", &RunConfig::data_kind},
      {"data_path", &RunConfig::data_path},
      {"split_path", &RunConfig::split_path},
      {"resolution", &RunConfig::resolution},
      {"synthetic_classes", &RunConfig::synthetic_classes},
      {"synthetic_per_class", &RunConfig::synthetic_per_class},
      {"data_seed", &RunConfig::data_seed},
      {"train_classes", &RunConfig::train_classes},
      {"val_classes", &RunConfig::val_classes},
      {"test_classes", &RunConfig::test_classes},
      {"variant", &RunConfig::variant},
      {"timesteps", &RunConfig::timesteps},
      {"tau", &RunConfig::tau},
      {"v_th", &RunConfig::v_th},
      {"surrogate_width", &RunConfig::surrogate_width},
      {"channel_divisor", &RunConfig::channel_divisor},
      {"compact_channels", &RunConfig::compact_channels},
      {"hidden_channels", &RunConfig::hidden_channels},
      {"gamma", &RunConfig::gamma},
      {"use_sfe", &RunConfig::use_sfe},
      {"use_cfc", &RunConfig::use_cfc},
      {"lambda", &RunConfig::lambda},
      {"tau_c", &RunConfig::tau_c},
      {"n_way", &RunConfig::n_way},
      {"k_shot", &RunConfig::k_shot},
      {"q_query", &RunConfig::q_query},
      {"episodes", &RunConfig::episodes},
      {"lr", &RunConfig::lr},
      {"momentum", &RunConfig::momentum},
      {"weight_decay", &RunConfig::weight_decay},
      {"grad_clip", &RunConfig::grad_clip},
      {"seed", &RunConfig::seed},
      {"timing", &RunConfig::timing},
      {"log_every", &RunConfig::log_every},
      {"eval_episodes", &RunConfig::eval_episodes},
      {"eval_seed", &RunConfig::eval_seed},
      {"noise_rate", &RunConfig::noise_rate},
      {"noise_queries_only", &RunConfig::noise_queries_only},
      {"eval_partition", &RunConfig::eval_partition},
      {"probe_episodes", &RunConfig::probe_episodes},
  };
  return table;
}

const Field* find_field(const std::string& name) {
  for (const auto& f : fields()) {
    if (name == f.name) return &f;
  }
  return nullptr;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "; ") + p;
  return out;
}

// Runs a module validator and keeps its message.
template <typename F>
void collect(std::vector<std::string>& out, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    out.emplace_back(e.what());
  }
}

// Sets a field from a JSON value; returns an error message or "".
std::string assign(RunConfig& c, const Field& f, const nlohmann::json& v) {
  const std::string key = f.name;
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) return key + " must be a string";
          c.*member = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) return key + " must be true or false";
          c.*member = v.get<bool>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) return key + " must be a number";
          c.*member = v.get<double>();
        } else {
          if (!v.is_number_unsigned()) return key + " must be a nonnegative integer";
          c.*member = v.get<std::uint64_t>();
        }
        return "";
      },
      f.member);
}

nlohmann::json parse_scalar(const Field& f, const std::string& text) {
  const std::string key = f.name;
  return std::visit(
      [&](auto member) -> nlohmann::json {
        using T = std::remove_reference_t<decltype(RunConfig{}.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return text;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1") return true;
          if (text == "false" || text == "0") return false;
          throw ConfigError(key + " must be true or false, got '" + text + "'");
        } else if constexpr (std::is_same_v<T, double>) {
          double d = 0;
          const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), d);
          if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(d)) {
            throw ConfigError(key + " must be a finite number, got '" + text + "'");
          }
          return d;
        } else {
          std::uint64_t n = 0;
          const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
          if (ec != std::errc() || end != text.data() + text.size()) {
            throw ConfigError(key + " must be a nonnegative integer, got '" + text + "'");
          }
          return n;
        }
      },
      f.member);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& f : fields()) {
    std::visit([&](auto member) { j[f.name] = c.*member; }, f.member);
  }
  return j;
}

}  // namespace

std::vector<std::string> violations(const RunConfig& c) {
  std::vector<std::string> out;
  auto require = [&](bool ok, const std::string& message) {
    if (!ok) out.push_back(message);
  };

  require(c.data_kind == "synthetic" || c.data_kind == "images" || c.data_kind == "events",
          "data_kind must be synthetic, images or events, got '" + c.data_kind + "'");
  require(c.data_kind == "synthetic" || !c.data_path.empty(), "data_path is required for " + c.data_kind + " data");
  require(c.data_kind == "events" || c.resolution >= 16, "resolution must be >= 16");
  if (c.data_kind == "synthetic") {
    require(c.synthetic_per_class >= 1, "synthetic_per_class must be >= 1");
    if (c.split_path.empty()) {
      require(c.train_classes + c.val_classes + c.test_classes <= c.synthetic_classes,
              "train_classes + val_classes + test_classes exceeds synthetic_classes (" +
                  std::to_string(c.synthetic_classes) + ")");
    }
    require(c.synthetic_per_class >= c.k_shot + c.q_query,
            "synthetic_per_class must be >= k_shot + q_query (" + std::to_string(c.k_shot + c.q_query) + ")");
  }
  if (c.split_path.empty()) {
    require(c.train_classes >= c.n_way, "train_classes must be >= n_way");
    const auto eval_classes = c.eval_partition == "val" ? c.val_classes
                              : c.eval_partition == "train" ? c.train_classes
                                                            : c.test_classes;
    require(eval_classes >= c.n_way, c.eval_partition + " partition must hold >= n_way classes");
  }

  backbone::Variant variant = backbone::Variant::vggsnn;
  bool variant_ok = true;
  try {
    variant = backbone::parse_variant(c.variant);
  } catch (const Error& e) {
    variant_ok = false;
    out.emplace_back(e.what());
  }
  require(c.timesteps >= 1, "timesteps must be >= 1");
  if (variant_ok && c.timesteps >= 1 && c.channel_divisor >= 1) {
    collect(out, [&] {
      auto b = backbone::BackboneConfig::make(variant, c.timesteps, 1, c.channel_divisor);
      b.validate();
      if (c.data_kind != "events") b.output_spatial(c.resolution, c.resolution);
    });
  } else if (c.channel_divisor == 0) {
    out.push_back("channel_divisor must be >= 1");
  }
  collect(out, [&] { spiking::LifParams{c.tau, c.v_th, c.surrogate_width}.validate(); });
  collect(out, [&] { cfc::CfcConfig{64, c.compact_channels, c.hidden_channels, c.gamma, c.use_cfc}.validate(); });
  collect(out, [&] { losses::LossConfig{c.lambda, c.tau_c, 1}.validate(); });
  require(c.episodes >= 1, "episodes must be >= 1");
  collect(out, [&] { train_config(c).validate(); });
  collect(out, [&] { eval_config(c).validate(); });
  require(c.eval_partition == "train" || c.eval_partition == "val" || c.eval_partition == "test",
          "eval_partition must be train, val or test");
  require(c.probe_episodes >= 1, "probe_episodes must be >= 1");
  std::vector<std::string> unique;
  for (auto& m : out) {
    if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(std::move(m));
  }
  return unique;
}

void validate(const RunConfig& config) {
  const auto v = violations(config);
  if (!v.empty()) throw ConfigError("invalid config: " + join(v));
}

std::string serialize(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig parse(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config must be a JSON object");
  RunConfig c;
  std::vector<std::string> errors;
  for (const auto& [key, value] : j.items()) {
    const Field* f = find_field(key);
    if (!f) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    if (auto msg = assign(c, *f, value); !msg.empty()) errors.push_back(msg);
  }
  // fields that failed to assign keep their defaults
  for (auto& v : violations(c)) errors.push_back(std::move(v));
  if (!errors.empty()) throw ConfigError("invalid config: " + join(errors));
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  try {
    return parse(s.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  if (auto msg = assign(config, *f, parse_scalar(*f, assignment.substr(eq + 1))); !msg.empty()) {
    throw ConfigError(msg);
  }
}

fewshot::ModelConfig model_config(const RunConfig& c, std::size_t in_channels, std::size_t num_train_classes) {
  fewshot::ModelConfig m;
  m.variant = backbone::parse_variant(c.variant);
  m.timesteps = c.timesteps;
  m.in_channels = in_channels;
  m.channel_divisor = c.channel_divisor;
  m.lif = {c.tau, c.v_th, c.surrogate_width};
  m.compact_channels = c.compact_channels;
  m.hidden_channels = c.hidden_channels;
  m.gamma = c.gamma;
  m.use_sfe = c.use_sfe;
  m.use_cfc = c.use_cfc;
  m.num_train_classes = num_train_classes;
  return m;
}

fewshot::TrainConfig train_config(const RunConfig& c) {
  fewshot::TrainConfig t;
  t.n_way = c.n_way;
  t.k_shot = c.k_shot;
  t.q_query = c.q_query;
  t.episodes = c.episodes;
  t.lr = c.lr;
  t.momentum = c.momentum;
  t.weight_decay = c.weight_decay;
  t.grad_clip = c.grad_clip;
  t.lambda = c.lambda;
  t.tau_c = c.tau_c;
  t.seed = c.seed;
  t.timing = c.timing;
  return t;
}

fewshot::EvalConfig eval_config(const RunConfig& c) {
  fewshot::EvalConfig e;
  e.n_way = c.n_way;
  e.k_shot = c.k_shot;
  e.q_query = c.q_query;
  e.episodes = c.eval_episodes;
  e.seed = c.eval_seed;
  e.noise_rate = c.noise_rate;
  e.noise_queries_only = c.noise_queries_only;
  e.partition = c.eval_partition;
  e.threads = 1;
  return e;
}

}  // namespace sscf::cli
