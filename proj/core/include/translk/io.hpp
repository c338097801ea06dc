#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "translk/tensor.hpp"

namespace translk {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// TLK1 tensor file: the four bytes "TLK1", one byte rank (always 5), five
// little-endian u32 dims, then the values as little-endian IEEE-754 float32
// in row-major order.

void write_tlk1(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tlk1(std::istream& is);

void save_tlk1(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tlk1(const std::filesystem::path& path);

/// Encoded size in bytes of a TLK1 record for this shape.
std::size_t tlk1_size(const Shape& s);

}  // namespace translk
