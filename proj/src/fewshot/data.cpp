#include "sscf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sscf/ops.hpp"

namespace sscf::fewshot {

namespace fs = std::filesystem;

std::vector<std::size_t> Dataset::items_of(std::size_t class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].class_id == class_id) out.push_back(i);
  }
  return out;
}

Shape Dataset::item_shape() const {
  if (items.empty()) throw StateError("dataset has no items");
  return items.front().data.shape();
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw Error("uniform_index: empty range");
  const auto limit = Rng::max() - (Rng::max() % n + 1) % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r > limit);
  return static_cast<std::size_t>(r % n);
}

double uniform_real(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(Rng& rng) {
  double u1;
  do {
    u1 = uniform_real(rng);
  } while (u1 <= 0.0);
  const double u2 = uniform_real(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---- PGM ----

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

std::size_t pgm_number(const std::string& bytes, std::size_t& pos, const fs::path& path) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0, digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    ++pos;
    ++digits;
  }
  if (digits == 0) throw FormatError(path.string() + ": malformed PGM header");
  return value;
}

Image decode_pgm(const std::string& bytes, const fs::path& path) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(path.string() + ": not a binary PGM (P5)");
  std::size_t pos = 2;
  Image img;
  img.width = pgm_number(bytes, pos, path);
  img.height = pgm_number(bytes, pos, path);
  const auto maxval = pgm_number(bytes, pos, path);
  if (maxval == 0 || maxval > 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  if (img.width == 0 || img.height == 0) throw FormatError(path.string() + ": empty image");
  ++pos;  // single whitespace before the raster
  const auto n = img.width * img.height;
  if (bytes.size() < pos + n) throw FormatError(path.string() + ": truncated PGM raster");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<double>(maxval);
  }
  return img;
}

}  // namespace

Image read_pgm(const fs::path& path) { return decode_pgm(read_file(path), path); }

std::string encode_pgm(const Image& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  for (double v : image.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

void write_pgm(const fs::path& path, const Image& image) { write_file(path, encode_pgm(image)); }

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ConfigError("resize target must be nonempty");
  if (width == image.width && height == image.height) return image;
  Image out{width, height, std::vector<double>(width * height)};
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const auto y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const auto x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const auto& p = image.pixels;
      const double top = p[y0 * image.width + x0] * (1 - wx) + p[y0 * image.width + x1] * wx;
      const double bottom = p[y1 * image.width + x0] * (1 - wx) + p[y1 * image.width + x1] * wx;
      out.pixels[y * width + x] = top * (1 - wy) + bottom * wy;
    }
  }
  return out;
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories, const std::string& extension) {
  std::vector<fs::path> out;
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
  for (const auto& entry : it) {
    if (directories ? entry.is_directory() : (entry.is_regular_file() && entry.path().extension() == extension)) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <typename Load>
Dataset load_tree(const fs::path& root, const std::string& extension, bool events, Load load) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  ds.events = events;
  for (const auto& dir : sorted_entries(root, true, "")) {
    const auto files = sorted_entries(dir, false, extension);
    if (files.empty()) continue;
    const auto id = ds.class_names.size();
    ds.class_names.push_back(dir.filename().string());
    for (const auto& file : files) {
      Tensor t = load(file);
      if (!ds.items.empty() && t.shape() != ds.items.front().data.shape()) {
        throw FormatError(file.string() + ": item shape " + shape_string(t.shape()) + " differs from " +
                          shape_string(ds.items.front().data.shape()));
      }
      ds.items.push_back({t, id});
    }
  }
  if (ds.items.empty()) throw IoError("no " + extension + " files under " + root.string());
  return ds;
}

}  // namespace

Dataset load_image_dataset(const fs::path& root, std::size_t resolution) {
  if (resolution == 0) throw ConfigError("image resolution must be positive");
  return load_tree(root, ".pgm", false, [&](const fs::path& file) {
    Image img = resize_bilinear(read_pgm(file), resolution, resolution);
    return Tensor({1, resolution, resolution}, std::move(img.pixels));
  });
}

void write_image_dataset(const fs::path& root, const Dataset& dataset) {
  if (dataset.events) throw ConfigError("write_image_dataset: dataset holds event sequences");
  std::vector<std::size_t> counter(dataset.num_classes(), 0);
  for (const auto& item : dataset.items) {
    const auto& s = item.data.shape();
    if (s.size() != 3 || s[0] != 1) throw ShapeError("write_image_dataset: items must be [1,H,W]");
    Image img{s[2], s[1], std::vector<double>(item.data.data().begin(), item.data.data().end())};
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu.pgm", counter[item.class_id]++);
    write_pgm(root / dataset.class_names[item.class_id] / name, img);
  }
}

// ---- SPK1 ----

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_spk(const Tensor& spikes) {
  if (spikes.rank() != 4) throw ShapeError("SPK1 payload must be [T,C,H,W], got " + shape_string(spikes.shape()));
  std::string out = "SPK1";
  for (auto d : spikes.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : spikes.data()) {
    if (v != 0.0 && v != 1.0) throw FormatError("SPK1 payload must be binary");
    out.push_back(v == 1.0 ? 1 : 0);
  }
  return out;
}

Tensor decode_spk(const std::string& bytes) {
  if (bytes.size() < 20 || bytes.compare(0, 4, "SPK1") != 0) throw FormatError("bad SPK1 magic");
  Shape shape;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto d = get_u32(bytes, 4 + 4 * i);
    if (d == 0) throw FormatError("SPK1 header has a zero dimension");
    shape.push_back(d);
  }
  const auto n = shape_numel(shape);
  if (bytes.size() != 20 + n) {
    throw FormatError("SPK1 payload is " + std::to_string(bytes.size() - 20) + " bytes, header " + shape_string(shape) +
                      " needs " + std::to_string(n));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = static_cast<unsigned char>(bytes[20 + i]);
    if (b > 1) throw FormatError("SPK1 payload byte " + std::to_string(i) + " is not 0 or 1");
    data[i] = b;
  }
  return Tensor(shape, std::move(data));
}

Tensor read_spk(const fs::path& path) {
  try {
    return decode_spk(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_spk(const fs::path& path, const Tensor& spikes) { write_file(path, encode_spk(spikes)); }

Dataset load_event_dataset(const fs::path& root) {
  return load_tree(root, ".spk", true, [](const fs::path& file) { return read_spk(file); });
}

// ---- synthetic glyphs ----

namespace {

struct Point {
  double x, y;
};

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

Image render_template(std::size_t res, Rng& rng, const GlyphOptions& opt) {
  const double r = static_cast<double>(res);
  const auto strokes = opt.strokes_min + uniform_index(rng, opt.strokes_max - opt.strokes_min + 1);
  std::vector<std::pair<Point, Point>> segments;
  auto coord = [&] { return r * (0.2 + 0.6 * uniform_real(rng)); };
  for (std::size_t s = 0; s < strokes; ++s) {
    // quadratic Bezier through a random control point
    const Point p0{coord(), coord()}, p1{coord(), coord()}, p2{coord(), coord()};
    Point prev = p0;
    constexpr int kPieces = 12;
    for (int i = 1; i <= kPieces; ++i) {
      const double t = static_cast<double>(i) / kPieces, u = 1 - t;
      const Point cur{u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x, u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y};
      segments.push_back({prev, cur});
      prev = cur;
    }
  }
  Image img{res, res, std::vector<double>(res * res, 0.0)};
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      double d = 1e300;
      for (const auto& [a, b] : segments) d = std::min(d, segment_distance(p, a, b));
      img.pixels[y * res + x] = std::clamp(1.0 - (d - opt.stroke_width / 2), 0.0, 1.0);
    }
  }
  return img;
}

double l2_distance(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return std::sqrt(s);
}

Image jitter(const Image& t, Rng& rng, const GlyphOptions& opt) {
  const double angle = opt.max_rotation * (2 * uniform_real(rng) - 1);
  const double scale = 1.0 + opt.max_scale * (2 * uniform_real(rng) - 1);
  const double sx = opt.max_shift * (2 * uniform_real(rng) - 1);
  const double sy = opt.max_shift * (2 * uniform_real(rng) - 1);
  const double c = std::cos(angle), s = std::sin(angle);
  const double cx = static_cast<double>(t.width) / 2, cy = static_cast<double>(t.height) / 2;
  Image out{t.width, t.height, std::vector<double>(t.pixels.size(), 0.0)};
  auto at = [&](long x, long y) {
    if (x < 0 || y < 0 || x >= static_cast<long>(t.width) || y >= static_cast<long>(t.height)) return 0.0;
    return t.pixels[static_cast<std::size_t>(y) * t.width + static_cast<std::size_t>(x)];
  };
  for (std::size_t y = 0; y < t.height; ++y) {
    for (std::size_t x = 0; x < t.width; ++x) {
      // inverse map output pixel center into the template
      const double dx = static_cast<double>(x) + 0.5 - cx - sx, dy = static_cast<double>(y) + 0.5 - cy - sy;
      const double u = (c * dx + s * dy) / scale + cx - 0.5, v = (-s * dx + c * dy) / scale + cy - 0.5;
      const auto x0 = static_cast<long>(std::floor(u)), y0 = static_cast<long>(std::floor(v));
      const double wx = u - static_cast<double>(x0), wy = v - static_cast<double>(y0);
      const double value = (at(x0, y0) * (1 - wx) + at(x0 + 1, y0) * wx) * (1 - wy) +
                           (at(x0, y0 + 1) * (1 - wx) + at(x0 + 1, y0 + 1) * wx) * wy;
      out.pixels[y * t.width + x] = std::clamp(value + opt.pixel_noise * standard_normal(rng), 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace

GlyphSet make_synthetic_glyphs(std::size_t num_classes, std::size_t per_class, std::size_t resolution, Rng& rng,
                               const GlyphOptions& options) {
  if (resolution < 16) throw ConfigError("synthetic glyph resolution must be >= 16, got " + std::to_string(resolution));
  if (num_classes == 0 || per_class == 0) throw ConfigError("synthetic glyphs need at least one class and item");
  if (options.strokes_min == 0 || options.strokes_max < options.strokes_min) {
    throw ConfigError("invalid glyph stroke range");
  }
  GlyphSet out;
  constexpr int kAttempts = 1000;
  // Stroke pixel counts grow linearly with the side length, and so do the distances.
  const double floor = options.min_separation * static_cast<double>(resolution) / 32.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
      Image candidate = render_template(resolution, rng, options);
      placed = std::all_of(out.templates.begin(), out.templates.end(), [&](const Image& other) {
        return l2_distance(candidate, other) >= floor;
      });
      if (placed) out.templates.push_back(std::move(candidate));
    }
    if (!placed) throw ConfigError("could not place glyph template " + std::to_string(k) + " above the separation floor");
  }
  auto& ds = out.dataset;
  for (std::size_t k = 0; k < num_classes; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03zu", k);
    ds.class_names.emplace_back(name);
    for (std::size_t i = 0; i < per_class; ++i) {
      Image img = jitter(out.templates[k], rng, options);
      ds.items.push_back({Tensor({1, resolution, resolution}, std::move(img.pixels)), k});
    }
  }
  return out;
}

// ---- noise ----

void NoiseSpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("noise rate must lie in [0,1], got " + std::to_string(rate));
}

Tensor add_gaussian_noise(const Tensor& x, double rate, Rng& rng) {
  NoiseSpec{rate, 0}.validate();
  if (rate == 0.0) return x;
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::clamp(in[i] + rate * standard_normal(rng), 0.0, 1.0);
  return Tensor(x.shape(), std::move(out));
}

Tensor add_gaussian_noise(const Tensor& x, const NoiseSpec& spec) {
  Rng rng(spec.seed);
  return add_gaussian_noise(x, spec.rate, rng);
}

// ---- splits ----

void SplitSpec::validate(std::size_t num_classes) const {
  std::set<std::size_t> seen;
  for (const auto* part : {&train, &val, &test}) {
    for (auto id : *part) {
      if (id >= num_classes) throw ConfigError("split references class id " + std::to_string(id) + " out of range");
      if (!seen.insert(id).second) {
        throw ConfigError("class id " + std::to_string(id) + " appears in more than one split partition");
      }
    }
  }
}

const std::vector<std::size_t>& SplitSpec::partition(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ConfigError("unknown split partition '" + name + "'");
}

SplitSpec make_split(const Dataset& dataset, std::size_t train, std::size_t val, std::size_t test) {
  if (train + val + test > dataset.num_classes()) {
    throw ConfigError("split needs " + std::to_string(train + val + test) + " classes, dataset has " +
                      std::to_string(dataset.num_classes()));
  }
  SplitSpec s;
  std::size_t id = 0;
  for (; id < train; ++id) s.train.push_back(id);
  for (; id < train + val; ++id) s.val.push_back(id);
  for (; id < train + val + test; ++id) s.test.push_back(id);
  return s;
}

SplitSpec read_split(const fs::path& path, const Dataset& dataset) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  SplitSpec s;
  for (const char* name : {"train", "val", "test"}) {
    auto& part = name == std::string("train") ? s.train : name == std::string("val") ? s.val : s.test;
    if (!j.contains(name)) continue;
    if (!j[name].is_array()) throw FormatError(path.string() + ": '" + name + "' must be an array of class names");
    for (const auto& cls : j[name]) {
      if (!cls.is_string()) throw FormatError(path.string() + ": class names must be strings");
      const auto it = std::find(dataset.class_names.begin(), dataset.class_names.end(), cls.get<std::string>());
      if (it == dataset.class_names.end()) {
        throw ConfigError(path.string() + ": unknown class '" + cls.get<std::string>() + "'");
      }
      part.push_back(static_cast<std::size_t>(it - dataset.class_names.begin()));
    }
  }
  s.validate(dataset.num_classes());
  return s;
}

void write_split(const fs::path& path, const SplitSpec& split, const Dataset& dataset) {
  nlohmann::json j;
  for (const char* name : {"train", "val", "test"}) {
    auto arr = nlohmann::json::array();
    for (auto id : split.partition(name)) arr.push_back(dataset.class_names.at(id));
    j[name] = arr;
  }
  write_file(path, j.dump(2) + "\n");
}

// ---- episodes ----

void Episode::validate(const Dataset& dataset) const {
  if (class_ids.size() != n_way || std::set<std::size_t>(class_ids.begin(), class_ids.end()).size() != n_way) {
    throw StateError("episode must have exactly N distinct classes");
  }
  if (support.size() != n_way * k_shot || query.size() != n_way * q_query) {
    throw StateError("episode support/query cardinalities do not match N*K and N*Q");
  }
  std::set<std::size_t> s(support.begin(), support.end());
  for (auto q : query) {
    if (s.count(q)) throw StateError("item " + std::to_string(q) + " is in both support and query");
  }
  for (std::size_t j = 0; j < support.size(); ++j) {
    if (dataset.items.at(support[j]).class_id != class_ids.at(support_class[j])) {
      throw StateError("support label does not match its item");
    }
  }
  for (std::size_t j = 0; j < query.size(); ++j) {
    if (dataset.items.at(query[j]).class_id != query_labels[j]) throw StateError("query label does not match its item");
  }
}

Episode sample_episode(const Dataset& dataset, const std::vector<std::size_t>& classes, std::size_t n_way,
                       std::size_t k_shot, std::size_t q_query, Rng& rng) {
  if (n_way == 0 || k_shot == 0 || q_query == 0) throw ConfigError("episode needs N, K, Q >= 1");
  if (classes.size() < n_way) {
    throw ConfigError("episode asks for " + std::to_string(n_way) + " classes, partition has " +
                      std::to_string(classes.size()));
  }
  // partial Fisher-Yates over the partition
  std::vector<std::size_t> pool = classes;
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.q_query = q_query;
  for (std::size_t i = 0; i < n_way; ++i) {
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    ep.class_ids.push_back(pool[i]);
  }
  std::vector<std::vector<std::size_t>> chosen(n_way);
  for (std::size_t n = 0; n < n_way; ++n) {
    auto items = dataset.items_of(ep.class_ids[n]);
    if (items.size() < k_shot + q_query) {
      throw ConfigError("class '" + dataset.class_names.at(ep.class_ids[n]) + "' has " + std::to_string(items.size()) +
                        " items, episode needs " + std::to_string(k_shot + q_query));
    }
    for (std::size_t i = 0; i < k_shot + q_query; ++i) {
      std::swap(items[i], items[i + uniform_index(rng, items.size() - i)]);
    }
    chosen[n].assign(items.begin(), items.begin() + static_cast<long>(k_shot + q_query));
  }
  for (std::size_t n = 0; n < n_way; ++n) {
    for (std::size_t i = 0; i < k_shot; ++i) {
      ep.support.push_back(chosen[n][i]);
      ep.support_class.push_back(n);
    }
  }
  for (std::size_t n = 0; n < n_way; ++n) {
    for (std::size_t i = 0; i < q_query; ++i) {
      ep.query.push_back(chosen[n][k_shot + i]);
      ep.query_labels.push_back(ep.class_ids[n]);
    }
  }
  return ep;
}

Tensor stack_items(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("stack_items: no items");
  std::vector<Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) {
    const auto& t = dataset.items.at(i).data;
    Shape s = t.shape();
    if (dataset.events) {
      s.insert(s.begin() + 1, 1);
    } else {
      s.insert(s.begin(), 1);
    }
    parts.push_back(reshape(t, s));
  }
  return concat(parts, dataset.events ? 1 : 0);
}

}  // namespace sscf::fewshot
