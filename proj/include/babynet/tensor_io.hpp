#pragma once

#include <filesystem>

#include "babynet/tensor.hpp"

namespace babynet {

// Binary tensor file format:
//   magic "BNT1" | u8 dtype (0 = f32) | u8 rank | rank x u32 LE dims |
//   raw little-endian f32 payload.
void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);

}  // namespace babynet
