#pragma once

// NTF tensor container.
//
//   bytes 0-3   magic "NTF1"
//   bytes 4-7   little-endian u32 header length
//   header      UTF-8 JSON {"name": str, "dtype": "f32", "shape": [ints]}
//   payload     little-endian IEEE-754 f32, row-major, product(shape) * 4 bytes
//
// Reading promotes to double; writing demotes with round-to-nearest.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dyfn/tensor.hpp"

namespace dyfn::ntf {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode(const std::string& name, const Tensor& t);
NamedTensor decode(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const std::string& name, const Tensor& t);
NamedTensor read_named(const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

/// Round-trips a tensor through f32 storage precision.
Tensor to_f32_precision(const Tensor& t);

}  // namespace dyfn::ntf
