#include "translk/io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace translk {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'L', 'K', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16),
                                       static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("TLK1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::size_t tlk1_size(const Shape& s) {
  return 4 + 1 + 5 * 4 + static_cast<std::size_t>(s.numel()) * 4;
}

void write_tlk1(std::ostream& os, const Tensor<float>& t) {
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(5));
  for (Index d : t.shape().dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("TLK1: dim exceeds u32");
    put_u32(os, static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw FormatError("TLK1: write failed");
}

Tensor<float> read_tlk1(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw FormatError("TLK1: bad magic");
  char rank = 0;
  if (!is.get(rank) || rank != 5) throw FormatError("TLK1: rank must be 5");
  Shape s;
  for (auto& d : s.dims) {
    d = get_u32(is);
    if (d == 0) throw FormatError("TLK1: zero dim");
  }
  std::vector<float> data(static_cast<std::size_t>(s.numel()));
  for (auto& v : data) {
    std::array<unsigned char, 4> b{};
    if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("TLK1: truncated data");
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    v = std::bit_cast<float>(u);
  }
  return Tensor<float>(s, std::move(data));
}

void save_tlk1(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tlk1(os, t);
}

Tensor<float> load_tlk1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tlk1(is);
}

}  // namespace translk
