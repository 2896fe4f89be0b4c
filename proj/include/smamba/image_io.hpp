#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "smamba/tensor.hpp"

// 16-bit binary PGM (P5, big-endian samples) for quick visual inspection;
// exact tensors travel as SRT instead.

namespace smamba {

namespace detail {

// Skips whitespace and '#' comment lines between header tokens.
inline std::string pgm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw DataError("pgm: truncated header");
  return tok;
}

}  // namespace detail

// Clamps to [0,1] and quantizes to 16 bits.
template <typename T>
void pgm_write(const std::string& path, const Tensor<T>& img) {
  if (img.ndim() != 3 || img.size(2) != 1)
    throw ShapeError("pgm_write: expected (h,w,1), got " +
                     shape_str(img.shape()));
  const std::int64_t h = img.size(0), w = img.size(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("pgm_write: cannot open " + path);
  os << "P5\n" << w << " " << h << "\n65535\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 2);
  const T* p = img.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double v = std::min(1.0, std::max(0.0, double(p[y * w + x])));
      const auto q = static_cast<std::uint16_t>(v * 65535.0 + 0.5);
      row[2 * x] = static_cast<unsigned char>(q >> 8);
      row[2 * x + 1] = static_cast<unsigned char>(q & 0xff);
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw DataError("pgm_write: write failed: " + path);
}

template <typename T = double>
Tensor<T> pgm_read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("pgm_read: cannot open " + path);
  if (detail::pgm_token(is) != "P5")
    throw DataError("pgm_read: not binary PGM: " + path);
  const std::int64_t w = std::stoll(detail::pgm_token(is));
  const std::int64_t h = std::stoll(detail::pgm_token(is));
  const std::int64_t maxval = std::stoll(detail::pgm_token(is));
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
    throw DataError("pgm_read: bad header in " + path);
  Tensor<T> img({h, w, 1});
  T* p = img.data();
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * bytes);
  for (std::int64_t y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
    if (!is) throw DataError("pgm_read: truncated pixels in " + path);
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t raw =
          bytes == 2 ? (row[2 * x] << 8) | row[2 * x + 1] : row[x];
      p[y * w + x] = T(double(raw) / double(maxval));
    }
  }
  return img;
}

// Elementwise dtype conversion between tensor precisions.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& a) {
  Tensor<To> out(a.shape());
  const From* p = a.data();
  To* q = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) q[i] = To(p[i]);
  return out;
}

}  // namespace smamba
