// SPDX-License-Identifier: Apache-2.0
//
// TNSR binary format:
//   "TNSR" | u8 version (1) | u8 dtype (0 f32, 1 f64) | u8 rank |
//   rank x u32 dims (LE) | row-major data (LE)
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "detectlab/tensor.hpp"

namespace detectlab {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::kF32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::kF64;
}

template <typename T>
void write_tnsr(std::ostream& os, const Tensor<T>& t);

// Reads either dtype and converts to T (exact for the matching dtype).
template <typename T>
Tensor<T> read_tnsr(std::istream& is);

template <typename T>
void save_tnsr(const std::filesystem::path& path, const Tensor<T>& t);

template <typename T>
Tensor<T> load_tnsr(const std::filesystem::path& path);

// Peeks at the dtype byte of a TNSR file.
DType tnsr_dtype(const std::filesystem::path& path);

}  // namespace detectlab
