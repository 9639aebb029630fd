#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sscf/tensor.hpp"

namespace sscf {

// Shape information sufficient to count a layer's multiply-accumulates.
// kind: "conv2d", "conv4d", "linear", "selfcorr" or "crosscorr". For
// "linear", in/out_channels hold the feature counts.
struct LayerDescription {
  std::string kind;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Shape kernel;
  Shape out_spatial;
};

// What one instrumented layer saw during a forward pass.
struct LayerActivity {
  std::string name;
  LayerDescription layer;
  bool spiking_input = false;  // input is a binary spike train
  bool per_timestep = true;    // executed once per time step
  std::size_t timesteps = 1;
  std::size_t samples = 0;     // batch entries per time step (images or pairs)
  Tensor input;                // [T,B,...] or [B,...], detached
  Tensor pre_activation;       // layer output before any nonlinearity, detached
  Tensor spikes;               // LIF output [T,B,C,H,W] when the layer fires, else undefined
};

class ActivityRecorder {
 public:
  void record(LayerActivity activity) { layers_.push_back(std::move(activity)); }
  const std::vector<LayerActivity>& layers() const { return layers_; }
  // Sets the LIF output of the most recent record named `name`.
  void attach_spikes(const std::string& name, Tensor spikes) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (it->name == name) {
        it->spikes = std::move(spikes);
        return;
      }
    }
  }
  void clear() { layers_.clear(); }

 private:
  std::vector<LayerActivity> layers_;
};

}  // namespace sscf
