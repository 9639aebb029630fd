#include "sscf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace sscf {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'C', 'F'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at offset " +
                        std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& records) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    const auto& shape = r.value.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : r.value.data()) put_f64(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: missing SSCF magic");
  }
  Reader in(bytes);
  in.str(4, "magic");
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<NamedTensor> records;
  while (!in.done()) {
    const auto name_len = in.u32("name length");
    auto name = in.str(name_len, "name");
    const auto rank = in.u32("rank");
    if (rank == 0) throw FormatError("record '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.u32("dimension");
      if (d == 0) throw FormatError("record '" + name + "' has a zero dimension");
    }
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = in.f64("payload");
    records.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return records;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_checkpoint(records);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<NamedTensor> collect_state(const nn::ParameterSet& params) {
  std::vector<NamedTensor> out;
  for (const auto& p : params.parameters()) out.push_back({p.name, p.tensor->detach()});
  for (const auto& n : params.norms()) {
    if (!n.state->initialized) continue;
    const auto c = n.state->running_mean.size();
    out.push_back({n.name + ".running_mean", Tensor({c}, n.state->running_mean)});
    out.push_back({n.name + ".running_var", Tensor({c}, n.state->running_var)});
  }
  return out;
}

void load_state(const nn::ParameterSet& params, const std::vector<NamedTensor>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : records) by_name[r.name] = &r.value;
  for (const auto& p : params.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ShapeError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor->shape()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                       ", model expects " + shape_string(p.tensor->shape()));
    }
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), p.tensor->mutable_data().begin());
  }
  for (const auto& n : params.norms()) {
    auto m = by_name.find(n.name + ".running_mean");
    auto v = by_name.find(n.name + ".running_var");
    if (m == by_name.end() || v == by_name.end()) continue;
    const auto c = n.state->running_mean.size();
    if (m->second->shape() != Shape{c} || v->second->shape() != Shape{c}) {
      throw ShapeError("checkpoint running statistics for '" + n.name + "' do not match " + std::to_string(c) +
                       " channels");
    }
    n.state->running_mean.assign(m->second->data().begin(), m->second->data().end());
    n.state->running_var.assign(v->second->data().begin(), v->second->data().end());
    n.state->initialized = true;
  }
}

}  // namespace sscf
