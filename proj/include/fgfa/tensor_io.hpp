#pragma once

#include <filesystem>

#include "fgfa/tensor.hpp"

namespace fgfa {

// Binary tensor file format (.fgt):
//   bytes 0..3   magic "FGT1"
//   byte  4      dtype code (0 = float32 little-endian)
//   byte  5      rank (1..4)
//   then         rank x uint32 little-endian extents
//   then         product(dims) float32 little-endian values, row-major
// Round trips are bit-exact.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace fgfa
