#include "tienet/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace tienet {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'I', 'E', 'N', 'E', 'T', 'C', 'K'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& entries) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : e.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint64_t>(in);
  std::vector<NamedTensor> entries;
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor e;
    const auto len = get_le<std::uint32_t>(in);
    e.name.resize(len);
    in.read(e.name.data(), len);
    if (!in) throw std::runtime_error("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: bad rank for " + e.name);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    e.value = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  write_checkpoint(out, entries);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace tienet
