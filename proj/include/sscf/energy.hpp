#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sscf/activity.hpp"
#include "sscf/train.hpp"

namespace sscf::energy {

inline constexpr double kJoulesPerSop = 0.9e-12;
inline constexpr double kJoulesPerFlop = 4.6e-12;
inline constexpr const char* kCountingConvention =
    "1 MAC = 1 FLOP; E_snn = 0.9 pJ * SOPs + 4.6 pJ * analog FLOPs; E_ann = 4.6 pJ * FLOPs";

// Dense multiply-accumulates for one sample at one time step:
//   conv2d, conv4d: Co * prod(out_spatial) * C * prod(kernel)
//   linear:         in * out
//   selfcorr:       C * H * W * U * V   (kernel = {U,V}, out_spatial = {H,W})
//   crosscorr:      C' * prod(out_spatial)   (out_spatial = {H,W,H,W})
std::uint64_t count_flops(const LayerDescription& layer);

// Mean of a binary tensor; FormatError on any other value.
double measure_firing_rate(const Tensor& spikes);

// round(fr * T * flops)
std::uint64_t sops(double firing_rate, std::size_t timesteps, std::uint64_t flops);

double snn_energy_joules(double total_sops, double analog_flops);
double ann_energy_joules(double flops);

struct LayerCostProfile {
  std::string name;
  std::string kind;
  bool spiking = false;        // binary input, charged per SOP
  std::uint64_t flops = 0;     // one dense forward at T = 1
  double firing_rate = 0.0;    // spiking layers only
  bool per_timestep = true;    // false: runs once after the temporal mean
  std::size_t timesteps = 1;   // executions per forward
  std::uint64_t sops = 0;      // spiking layers only
  std::uint64_t analog_flops = 0;  // analog layers: flops * executions
};

struct EnergyReport {
  std::vector<LayerCostProfile> layers;
  std::uint64_t total_sops = 0;
  std::uint64_t total_flops_analog = 0;
  std::uint64_t ann_flops = 0;  // same layers run densely once, as an ANN
  double e_snn_joules = 0.0;
  double e_ann_equiv_joules = 0.0;
  std::size_t timesteps = 0;
  std::string units = "per query image";
};

// Totals and energies from the layer rows.
void finalize(EnergyReport& report);

// Energies from given totals (no layer rows).
EnergyReport report_from_totals(std::uint64_t total_sops, std::uint64_t analog_flops, std::uint64_t ann_flops);

// Recomputes the report for another T with every layer's firing rate held.
EnergyReport with_timesteps(const EnergyReport& report, std::size_t timesteps);

// Sums instrumented forwards; `queries` is the number of query images each
// forward classified and sets the per-query normalization.
class EnergyAccumulator {
 public:
  void add(const std::vector<LayerActivity>& layers, std::size_t queries);
  EnergyReport finish() const;

 private:
  struct Totals {
    std::string kind;
    bool spiking = false;
    std::size_t timesteps = 1;
    bool per_timestep = true;
    double flops = 0.0;
    double ones = 0.0;
    double elements = 0.0;
  };
  std::vector<std::string> order_;
  std::map<std::string, Totals> totals_;
  std::size_t queries_ = 0;
  std::size_t timesteps_ = 0;
};

// Instrumented eval-mode forwards over `episodes` probe episodes.
EnergyReport energy_report(fewshot::SscfModel& model, const fewshot::Dataset& dataset, const fewshot::SplitSpec& split,
                           const fewshot::EvalConfig& probe, std::size_t episodes);

std::string report_json(const EnergyReport& report);
std::string report_table(const EnergyReport& report);

}  // namespace sscf::energy
