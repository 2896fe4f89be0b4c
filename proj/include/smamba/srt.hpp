#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "smamba/errors.hpp"
#include "smamba/tensor.hpp"

// SRT tensor container: magic "SRT1", u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u32 little-endian extents, then the raw little-endian payload.
// All checkpoints, dataset slices, and golden fixtures use this format.

namespace smamba {

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_u64le(std::ostream& os, std::uint64_t v) {
  put_u32le(os, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32le(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64le(std::istream& is) {
  const std::uint64_t lo = get_u32le(is);
  const std::uint64_t hi = get_u32le(is);
  return lo | (hi << 32);
}

template <typename T>
struct SrtDtype;
template <>
struct SrtDtype<float> {
  static constexpr std::uint8_t code = 0;
};
template <>
struct SrtDtype<double> {
  static constexpr std::uint8_t code = 1;
};

}  // namespace detail

template <typename T>
void srt_write(std::ostream& os, const Tensor<T>& t) {
  os.write("SRT1", 4);
  const std::uint8_t dtype = detail::SrtDtype<T>::code;
  const std::uint8_t rank = static_cast<std::uint8_t>(t.ndim());
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(rank));
  for (auto e : t.shape())
    detail::put_u32le(os, static_cast<std::uint32_t>(e));
  const T* p = t.data();
  const std::int64_t n = t.numel();
  std::vector<char> buf(static_cast<std::size_t>(n) * sizeof(T));
  char* w = buf.data();
  for (std::int64_t i = 0; i < n; ++i) {
    if constexpr (sizeof(T) == 4) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(p[i]);
      w[0] = static_cast<char>(u & 0xff);
      w[1] = static_cast<char>((u >> 8) & 0xff);
      w[2] = static_cast<char>((u >> 16) & 0xff);
      w[3] = static_cast<char>((u >> 24) & 0xff);
    } else {
      const std::uint64_t u = std::bit_cast<std::uint64_t>(p[i]);
      for (int k = 0; k < 8; ++k)
        w[k] = static_cast<char>((u >> (8 * k)) & 0xff);
    }
    w += sizeof(T);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("srt: write failed");
}

template <typename T>
Tensor<T> srt_read(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SRT1")
    throw DataError("srt: bad magic");
  const int dtype = is.get();
  const int rank = is.get();
  if (dtype != detail::SrtDtype<T>::code)
    throw DataError("srt: dtype code " + std::to_string(dtype) +
                    " does not match the requested scalar type");
  if (rank < 0 || rank > 8) throw DataError("srt: bad rank");
  Shape shape(rank);
  for (int d = 0; d < rank; ++d)
    shape[d] = static_cast<std::int64_t>(detail::get_u32le(is));
  const std::int64_t n = shape_numel(shape);
  std::vector<char> buf(static_cast<std::size_t>(n) * sizeof(T));
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!is) throw DataError("srt: truncated payload");
  std::vector<T> values(static_cast<std::size_t>(n));
  const char* r = buf.data();
  for (std::int64_t i = 0; i < n; ++i) {
    if constexpr (sizeof(T) == 4) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k)
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(r[k]))
             << (8 * k);
      values[i] = std::bit_cast<float>(u);
    } else {
      std::uint64_t u = 0;
      for (int k = 0; k < 8; ++k)
        u |= static_cast<std::uint64_t>(static_cast<unsigned char>(r[k]))
             << (8 * k);
      values[i] = std::bit_cast<double>(u);
    }
    r += sizeof(T);
  }
  return Tensor<T>::from(std::move(shape), std::move(values));
}

template <typename T>
void srt_save(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("srt: cannot open for write: " + path);
  srt_write(os, t);
}

template <typename T>
Tensor<T> srt_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("srt: cannot open: " + path);
  return srt_read<T>(is);
}

// Peek at the stored dtype code without consuming the tensor.
inline int srt_probe_dtype(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("srt: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "SRT1")
    throw DataError("srt: bad magic in " + path);
  return is.get();
}

}  // namespace smamba
