// SPDX-License-Identifier: Apache-2.0
#include "detectlab/tensor_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace detectlab {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'N', 'S', 'R'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw FormatError("TNSR: truncated stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

std::uint8_t get_u8(std::istream& is) {
  const int c = is.get();
  if (c == std::char_traits<char>::eof()) throw FormatError("TNSR: truncated header");
  return static_cast<std::uint8_t>(c);
}

}  // namespace

template <typename T>
void write_tnsr(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > 255) throw FormatError("TNSR: rank exceeds 255");
  os.write(kMagic.data(), kMagic.size());
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(dtype_of<T>()));
  os.put(static_cast<char>(t.rank()));
  for (Index d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("TNSR: dim exceeds u32");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (T v : t.data()) {
    if constexpr (sizeof(T) == 4) {
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
    } else {
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!os) throw FormatError("TNSR: write failed");
}

template <typename T>
Tensor<T> read_tnsr(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw FormatError("TNSR: bad magic");
  const auto version = get_u8(is);
  if (version != kVersion) throw FormatError("TNSR: unsupported version " + std::to_string(version));
  const auto dtype = get_u8(is);
  if (dtype > 1) throw FormatError("TNSR: unknown dtype " + std::to_string(dtype));
  const auto rank = get_u8(is);
  Shape shape;
  for (int i = 0; i < rank; ++i) shape.push_back(get_le<std::uint32_t>(is));
  const Index n = shape_numel(shape);
  std::vector<T> data(static_cast<std::size_t>(n));
  for (auto& v : data) {
    if (dtype == 0) {
      v = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(is)));
    } else {
      v = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(is)));
    }
  }
  return Tensor<T>::from(std::move(shape), std::move(data));
}

template <typename T>
void save_tnsr(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tnsr(os, t);
}

template <typename T>
Tensor<T> load_tnsr(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tnsr<T>(is);
}

DType tnsr_dtype(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::array<char, 6> head{};
  is.read(head.data(), head.size());
  if (!is || !std::equal(kMagic.begin(), kMagic.end(), head.begin()))
    throw FormatError("TNSR: bad header in " + path.string());
  return static_cast<DType>(head[5]);
}

template void write_tnsr(std::ostream&, const Tensor<float>&);
template void write_tnsr(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tnsr(std::istream&);
template Tensor<double> read_tnsr(std::istream&);
template void save_tnsr(const std::filesystem::path&, const Tensor<float>&);
template void save_tnsr(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tnsr(const std::filesystem::path&);
template Tensor<double> load_tnsr(const std::filesystem::path&);

}  // namespace detectlab
