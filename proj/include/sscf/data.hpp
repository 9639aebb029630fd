#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sscf/nn.hpp"
#include "sscf/tensor.hpp"

namespace sscf::fewshot {

using nn::Rng;

struct Item {
  Tensor data;  // static [C,H,W] in [0,1], or events [T,C,H,W] in {0,1}
  std::size_t class_id = 0;
};

struct Dataset {
  std::vector<std::string> class_names;  // index = class id
  std::vector<Item> items;
  bool events = false;

  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> items_of(std::size_t class_id) const;
  Shape item_shape() const;
};

// Grayscale binary PGM (P5, maxval <= 255).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major, in [0,1]
};
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& image);
std::string encode_pgm(const Image& image);
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

// root/<class_name>/<item>.pgm; class ids follow sorted directory names,
// items sorted by file name.
Dataset load_image_dataset(const std::filesystem::path& root, std::size_t resolution);

// SPK1: "SPK1" | u32 T,C,H,W (LE) | T*C*H*W bytes, each 0 or 1.
Tensor read_spk(const std::filesystem::path& path);
void write_spk(const std::filesystem::path& path, const Tensor& spikes);
Tensor decode_spk(const std::string& bytes);
std::string encode_spk(const Tensor& spikes);

// root/<class_name>/<item>.spk
Dataset load_event_dataset(const std::filesystem::path& root);

struct GlyphOptions {
  std::size_t strokes_min = 3;
  std::size_t strokes_max = 5;
  double stroke_width = 1.6;
  double min_separation = 8.0;  // L2 distance floor between templates at 32 px, scaled with resolution
  double max_rotation = 0.15;   // radians
  double max_scale = 0.08;      // relative
  double max_shift = 1.5;       // pixels
  double pixel_noise = 0.05;    // standard deviation
};

struct GlyphSet {
  Dataset dataset;
  std::vector<Image> templates;
};

GlyphSet make_synthetic_glyphs(std::size_t num_classes, std::size_t per_class, std::size_t resolution, Rng& rng,
                               const GlyphOptions& options = {});
// Writes root/<class_name>/<index>.pgm.
void write_image_dataset(const std::filesystem::path& root, const Dataset& dataset);

struct NoiseSpec {
  double rate = 0.0;  // in [0,1]
  std::uint64_t seed = 0;
  void validate() const;
};

// clamp(x + rate * N(0,1), 0, 1) elementwise; rate 0 returns x unchanged.
Tensor add_gaussian_noise(const Tensor& x, double rate, Rng& rng);
Tensor add_gaussian_noise(const Tensor& x, const NoiseSpec& spec);

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  // Pairwise disjointness and range check against the dataset.
  void validate(std::size_t num_classes) const;
  const std::vector<std::size_t>& partition(const std::string& name) const;
};

// First `train` classes in id order go to train, then val, then test.
SplitSpec make_split(const Dataset& dataset, std::size_t train, std::size_t val, std::size_t test);
// JSON {"train": [names], "val": [names], "test": [names]}.
SplitSpec read_split(const std::filesystem::path& path, const Dataset& dataset);
void write_split(const std::filesystem::path& path, const SplitSpec& split, const Dataset& dataset);

struct Episode {
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::size_t q_query = 0;
  std::vector<std::size_t> class_ids;        // N, in sampling order
  std::vector<std::size_t> support;          // dataset item indices, class-major, N*K
  std::vector<std::size_t> query;            // N*Q, class-major
  std::vector<std::size_t> support_class;    // position in class_ids per support item
  std::vector<std::size_t> query_labels;     // class id per query item

  void validate(const Dataset& dataset) const;
};

Episode sample_episode(const Dataset& dataset, const std::vector<std::size_t>& classes, std::size_t n_way,
                       std::size_t k_shot, std::size_t q_query, Rng& rng);

// Uniform integer in [0, n) from raw generator output.
std::size_t uniform_index(Rng& rng, std::size_t n);
double standard_normal(Rng& rng);
double uniform_real(Rng& rng);

// Stacks item tensors along a new leading batch axis; event items
// [T,C,H,W] become [T,B,C,H,W].
Tensor stack_items(const Dataset& dataset, const std::vector<std::size_t>& indices);

}  // namespace sscf::fewshot
