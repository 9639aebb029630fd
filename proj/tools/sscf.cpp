#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "sscf/cli.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run config (defaults apply when omitted)");
  cmd->add_option("--set", c.overrides, "override key=value (repeatable)")->expected(1, -1);
  cmd->add_option("--seed", c.seed, "training seed");
  cmd->add_option("--out", c.out, "output directory");
}

sscf::cli::RunConfig resolve(const Common& c) {
  sscf::cli::RunConfig config = c.config_path.empty() ? sscf::cli::RunConfig{} : sscf::cli::load_config(c.config_path);
  std::vector<std::string> errors;
  for (const auto& kv : c.overrides) {
    try {
      sscf::cli::apply_override(config, kv);
    } catch (const sscf::ConfigError& e) {
      errors.emplace_back(e.what());
    }
  }
  if (c.seed) config.seed = *c.seed;
  for (auto& v : sscf::cli::violations(config)) errors.push_back(std::move(v));
  if (!errors.empty()) {
    std::string all;
    for (const auto& e : errors) all += (all.empty() ? "" : "; ") + e;
    throw sscf::ConfigError("invalid config: " + all);
  }
  return config;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto token = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!token.empty()) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) throw sscf::ConfigError("sweep value '" + token + "' is not a number");
      values.push_back(v);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sscf: spiking few-shot learning with self- and cross-feature attention"};
  app.require_subcommand(1);

  Common common;

  auto* synth = app.add_subcommand("make-synthetic", "write a synthetic glyph dataset as a PGM tree");
  std::size_t classes = 40, per_class = 20, resolution = 32;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--out", synth_out, "dataset root")->required();
  synth->add_option("--classes", classes, "number of classes");
  synth->add_option("--per-class", per_class, "items per class");
  synth->add_option("--resolution", resolution, "square image side, >= 16");
  synth->add_option("--seed", synth_seed, "generator seed");

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint and metrics");
  add_common(train, common);

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on test episodes");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "weights file")->required();
  std::optional<std::size_t> episodes;
  eval->add_option("--episodes", episodes, "number of test episodes");

  auto* profile = app.add_subcommand("profile-energy", "SOP/FLOP energy report on probe episodes");
  add_common(profile, common);
  profile->add_option("--checkpoint", checkpoint, "weights file")->required();

  auto* exporter = app.add_subcommand("export", "export embeddings or spike rasters");
  add_common(exporter, common);
  exporter->add_option("--checkpoint", checkpoint, "weights file")->required();
  std::string what;
  exporter->add_option("--what", what, "embeddings or spike-raster")
      ->required()
      ->check(CLI::IsMember({"embeddings", "spike-raster"}));
  std::size_t raster_items = 8;
  exporter->add_option("--items", raster_items, "items per raster image");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate over a parameter grid");
  add_common(sweep, common);
  std::string param, values_text;
  std::size_t seeds = 1;
  sweep->add_option("--param", param, "lambda, noise or timesteps")->required();
  sweep->add_option("--values", values_text, "comma-separated values")->required();
  sweep->add_option("--seeds", seeds, "seeds per value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << sscf::cli::error_json(sscf::ConfigError(e.what())) << std::endl;
    return 2;
  }

  try {
    if (synth->parsed()) {
      sscf::cli::cmd_make_synthetic(synth_out, classes, per_class, resolution, synth_seed);
      std::cout << "wrote " << classes * per_class << " images in " << classes << " classes to " << synth_out << "\n";
    } else if (train->parsed()) {
      sscf::cli::cmd_train(resolve(common), common.out, std::cout);
    } else if (eval->parsed()) {
      auto config = resolve(common);
      if (episodes) {
        config.eval_episodes = *episodes;
        sscf::cli::validate(config);
      }
      sscf::cli::cmd_eval(config, checkpoint, common.out, std::cout);
    } else if (profile->parsed()) {
      sscf::cli::cmd_profile_energy(resolve(common), checkpoint, common.out, std::cout);
    } else if (exporter->parsed()) {
      const auto config = resolve(common);
      if (what == "embeddings") {
        const auto rows = sscf::cli::export_embeddings(config, checkpoint, common.out);
        std::cout << "wrote " << rows << " embeddings\n";
      } else {
        const auto files = sscf::cli::export_spike_raster(config, checkpoint, common.out, raster_items);
        std::cout << "wrote " << files << " raster images\n";
      }
    } else if (sweep->parsed()) {
      const auto config = resolve(common);
      const auto p = sscf::cli::parse_sweep_param(param);
      const auto points = sscf::cli::run_sweep(config, p, parse_values(values_text), seeds, std::cout);
      const auto table = sscf::cli::sweep_table(p, points);
      std::filesystem::create_directories(common.out);
      std::ofstream(std::filesystem::path(common.out) / "sweep.json") << sscf::cli::sweep_json(p, points);
      std::cout << table;
    }
  } catch (const std::exception& e) {
    std::cerr << sscf::cli::error_json(e) << std::endl;
    return 1;
  }
  return 0;
}
