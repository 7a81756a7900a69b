#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tienet/tensor.hpp"

namespace tienet {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Binary layout, all integers and values little-endian:
//   "TIENETCK" u32 version u64 count
//   count x { u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[] }
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace tienet
