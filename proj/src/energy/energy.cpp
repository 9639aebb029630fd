#include "sscf/energy.hpp"

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "sscf/ops.hpp"

namespace sscf::energy {

std::uint64_t count_flops(const LayerDescription& layer) {
  const auto out = layer.out_spatial.empty() ? 1 : shape_numel(layer.out_spatial);
  const auto kernel = layer.kernel.empty() ? 1 : shape_numel(layer.kernel);
  if (layer.kind == "conv2d" || layer.kind == "conv4d") {
    const std::size_t rank = layer.kind == "conv2d" ? 2 : 4;
    if (layer.kernel.size() != rank || layer.out_spatial.size() != rank) {
      throw ConfigError(layer.kind + " layer needs " + std::to_string(rank) + "-axis kernel and output shapes");
    }
    return static_cast<std::uint64_t>(layer.out_channels) * out * layer.in_channels * kernel;
  }
  if (layer.kind == "linear") return static_cast<std::uint64_t>(layer.in_channels) * layer.out_channels;
  if (layer.kind == "selfcorr") {
    if (layer.kernel.size() != 2 || layer.out_spatial.size() != 2) {
      throw ConfigError("selfcorr layer needs {U,V} neighborhood and {H,W} output");
    }
    return static_cast<std::uint64_t>(layer.in_channels) * out * kernel;
  }
  if (layer.kind == "crosscorr") {
    if (layer.out_spatial.size() != 4) throw ConfigError("crosscorr layer needs an {H,W,H,W} output");
    return static_cast<std::uint64_t>(layer.in_channels) * out;
  }
  throw ConfigError("unknown layer kind '" + layer.kind + "'");
}

double measure_firing_rate(const Tensor& spikes) {
  auto v = spikes.data();
  double ones = 0;
  for (double x : v) {
    if (x == 1.0) {
      ones += 1;
    } else if (x != 0.0) {
      throw FormatError("firing rate needs a binary spike tensor, found value " + std::to_string(x));
    }
  }
  return ones / static_cast<double>(v.size());
}

std::uint64_t sops(double firing_rate, std::size_t timesteps, std::uint64_t flops) {
  if (!(firing_rate >= 0.0 && firing_rate <= 1.0)) throw ConfigError("firing rate must lie in [0,1]");
  return static_cast<std::uint64_t>(std::llround(firing_rate * static_cast<double>(timesteps) * static_cast<double>(flops)));
}

double snn_energy_joules(double total_sops, double analog_flops) {
  return kJoulesPerSop * total_sops + kJoulesPerFlop * analog_flops;
}

double ann_energy_joules(double flops) { return kJoulesPerFlop * flops; }

void finalize(EnergyReport& report) {
  report.total_sops = 0;
  report.total_flops_analog = 0;
  report.ann_flops = 0;
  for (const auto& l : report.layers) {
    report.total_sops += l.sops;
    report.total_flops_analog += l.analog_flops;
    report.ann_flops += l.flops;
  }
  report.e_snn_joules =
      snn_energy_joules(static_cast<double>(report.total_sops), static_cast<double>(report.total_flops_analog));
  report.e_ann_equiv_joules = ann_energy_joules(static_cast<double>(report.ann_flops));
}

EnergyReport report_from_totals(std::uint64_t total_sops, std::uint64_t analog_flops, std::uint64_t ann_flops) {
  EnergyReport r;
  r.total_sops = total_sops;
  r.total_flops_analog = analog_flops;
  r.ann_flops = ann_flops;
  r.e_snn_joules = snn_energy_joules(static_cast<double>(total_sops), static_cast<double>(analog_flops));
  r.e_ann_equiv_joules = ann_energy_joules(static_cast<double>(ann_flops));
  return r;
}

EnergyReport with_timesteps(const EnergyReport& report, std::size_t timesteps) {
  if (timesteps == 0) throw ConfigError("timesteps must be >= 1");
  EnergyReport r = report;
  r.timesteps = timesteps;
  for (auto& l : r.layers) {
    if (!l.per_timestep) continue;
    l.timesteps = timesteps;
    if (l.spiking) {
      l.sops = sops(l.firing_rate, timesteps, l.flops);
    } else {
      l.analog_flops = l.flops * timesteps;
    }
  }
  finalize(r);
  return r;
}

void EnergyAccumulator::add(const std::vector<LayerActivity>& layers, std::size_t queries) {
  if (queries == 0) throw ConfigError("energy accumulation needs at least one query image");
  queries_ += queries;
  for (const auto& a : layers) {
    auto [it, inserted] = totals_.try_emplace(a.name);
    auto& t = it->second;
    if (inserted) {
      order_.push_back(a.name);
      t.kind = a.layer.kind;
      t.spiking = a.spiking_input;
      t.per_timestep = a.per_timestep;
      t.timesteps = a.per_timestep ? a.timesteps : 1;
    }
    if (a.per_timestep) timesteps_ = std::max(timesteps_, a.timesteps);
    t.flops += static_cast<double>(count_flops(a.layer)) * static_cast<double>(a.samples);
    if (t.spiking) {
      if (!a.input.defined()) throw StateError("spiking layer " + a.name + " recorded no input");
      const double fr = measure_firing_rate(a.input);
      t.ones += fr * static_cast<double>(a.input.numel());
      t.elements += static_cast<double>(a.input.numel());
    }
  }
}

EnergyReport EnergyAccumulator::finish() const {
  if (queries_ == 0) throw StateError("no instrumented forward was accumulated");
  EnergyReport r;
  r.timesteps = timesteps_;
  for (const auto& name : order_) {
    const auto& t = totals_.at(name);
    LayerCostProfile p;
    p.name = name;
    p.kind = t.kind;
    p.spiking = t.spiking;
    p.flops = static_cast<std::uint64_t>(std::llround(t.flops / static_cast<double>(queries_)));
    p.per_timestep = t.per_timestep;
    p.timesteps = t.timesteps;
    if (t.spiking) {
      p.firing_rate = t.elements > 0 ? t.ones / t.elements : 0.0;
      p.sops = sops(p.firing_rate, p.timesteps, p.flops);
    } else {
      p.analog_flops = p.flops * p.timesteps;
    }
    r.layers.push_back(p);
  }
  finalize(r);
  return r;
}

EnergyReport energy_report(fewshot::SscfModel& model, const fewshot::Dataset& dataset, const fewshot::SplitSpec& split,
                           const fewshot::EvalConfig& probe, std::size_t episodes) {
  probe.validate();
  if (episodes == 0) throw ConfigError("energy probe needs at least one episode");
  NoGradGuard guard;
  const auto& classes = split.partition(probe.partition);
  EnergyAccumulator acc;
  for (std::size_t i = 0; i < episodes; ++i) {
    fewshot::Rng rng(fewshot::derive_seed(probe.seed, i));
    auto ep = fewshot::sample_episode(dataset, classes, probe.n_way, probe.k_shot, probe.q_query, rng);
    auto inputs = fewshot::make_inputs(dataset, ep, probe.noise_rate, probe.noise_queries_only, rng);
    ActivityRecorder recorder;
    Tensor features = model.encode(inputs, Mode::eval, &recorder);
    model.embed(features, inputs, Mode::eval, &recorder);
    acc.add(recorder.layers(), ep.query.size());
  }
  return acc.finish();
}

std::string report_json(const EnergyReport& report) {
  nlohmann::ordered_json j;
  j["convention"] = kCountingConvention;
  j["units"] = report.units;
  j["timesteps"] = report.timesteps;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : report.layers) {
    nlohmann::ordered_json row;
    row["name"] = l.name;
    row["kind"] = l.kind;
    row["spiking"] = l.spiking;
    row["flops"] = l.flops;
    row["fr"] = l.firing_rate;
    row["T"] = l.timesteps;
    row["sops"] = l.sops;
    row["analog_flops"] = l.analog_flops;
    layers.push_back(row);
  }
  j["layers"] = layers;
  j["totals"] = {{"sops", report.total_sops}, {"flops_analog", report.total_flops_analog}, {"ann_flops", report.ann_flops}};
  j["joules"] = {{"e_snn", report.e_snn_joules}, {"e_ann_equiv", report.e_ann_equiv_joules}};
  return j.dump(2);
}

std::string report_table(const EnergyReport& report) {
  std::string out = std::string("# ") + kCountingConvention + "\n# units: " + report.units +
                    ", T = " + std::to_string(report.timesteps) + "\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-20s %-9s %14s %8s %4s %14s %14s\n", "layer", "kind", "flops", "fr", "T", "sops",
                "analog_flops");
  out += line;
  for (const auto& l : report.layers) {
    std::snprintf(line, sizeof(line), "%-20s %-9s %14llu %8.4f %4zu %14llu %14llu\n", l.name.c_str(), l.kind.c_str(),
                  static_cast<unsigned long long>(l.flops), l.firing_rate, l.timesteps,
                  static_cast<unsigned long long>(l.sops), static_cast<unsigned long long>(l.analog_flops));
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-20s %-9s %14llu %8s %4s %14llu %14llu\n", "total", "",
                static_cast<unsigned long long>(report.ann_flops), "", "",
                static_cast<unsigned long long>(report.total_sops),
                static_cast<unsigned long long>(report.total_flops_analog));
  out += line;
  std::snprintf(line, sizeof(line), "E_snn = %.6f mJ   E_ann = %.6f mJ\n", report.e_snn_joules * 1e3,
                report.e_ann_equiv_joules * 1e3);
  out += line;
  return out;
}

}  // namespace sscf::energy
