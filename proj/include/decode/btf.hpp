#pragma once

#include <cstdint>
#include <string>

#include "decode/tensor.hpp"

namespace decode {

// Binary tensor file: magic "BTF1", u8 dtype (0 = f32, 1 = f64), u8 ndim,
// ndim x u64 little-endian extents, row-major payload. Trailing bytes are
// rejected.
constexpr uint8_t kBtfF32 = 0;
constexpr uint8_t kBtfF64 = 1;

void write_btf(const std::string& path, const Tensor& t, uint8_t dtype = kBtfF64);
Tensor read_btf(const std::string& path, uint8_t* dtype_out = nullptr);

}  // namespace decode
