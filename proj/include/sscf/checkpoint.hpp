#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sscf/nn.hpp"
#include "sscf/tensor.hpp"

namespace sscf {

// Binary weight file:
//   "SSCF" | u32 version | records...
//   record = u32 name_len | name bytes | u32 rank | u32 dims[rank] | f64 payload
// All integers and floats little-endian. Records run to end of file.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::string encode_checkpoint(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

// Parameters plus populated running statistics ("<bn>.running_mean",
// "<bn>.running_var").
std::vector<NamedTensor> collect_state(const nn::ParameterSet& params);

// Copies values into the set. Every parameter must be present with a
// matching shape; running statistics are optional.
void load_state(const nn::ParameterSet& params, const std::vector<NamedTensor>& records);

}  // namespace sscf
