#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "smamba/tensor.hpp"

// Catmull-Rom bicubic upscaling (a = -0.5), center-aligned sampling
// (src = (dst + 0.5)/s - 0.5), edge-clamped taps.  Kernel:
//   |t| <= 1:      1.5|t|^3 - 2.5|t|^2 + 1
//   1 < |t| < 2:  -0.5|t|^3 + 2.5|t|^2 - 4|t| + 2
// Accumulation runs in double and is not differentiated — this is a data-side
// op used for the residual base and the baseline row, not a network layer.

namespace smamba {

namespace detail {

inline double cubic_kernel(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

struct TapSet {
  std::int64_t base;  // index of tap 0 (may be out of range; clamp on use)
  double w[4];
};

inline std::vector<TapSet> cubic_taps(std::int64_t n_out, std::int64_t s) {
  std::vector<TapSet> taps(n_out);
  for (std::int64_t j = 0; j < n_out; ++j) {
    const double src = (j + 0.5) / double(s) - 0.5;
    const double fl = std::floor(src);
    const double f = src - fl;
    taps[j].base = static_cast<std::int64_t>(fl) - 1;
    taps[j].w[0] = cubic_kernel(f + 1.0);
    taps[j].w[1] = cubic_kernel(f);
    taps[j].w[2] = cubic_kernel(f - 1.0);
    taps[j].w[3] = cubic_kernel(f - 2.0);
  }
  return taps;
}

}  // namespace detail

template <typename T>
Tensor<T> bicubic_upscale(const Tensor<T>& lr, std::int64_t s) {
  if (lr.ndim() != 3)
    throw ShapeError("bicubic_upscale: image " + shape_str(lr.shape()));
  if (s != 2 && s != 4)
    throw DataError("bicubic_upscale: unsupported scale " +
                    std::to_string(s));
  const std::int64_t h = lr.size(0), w = lr.size(1), C = lr.size(2);
  const std::int64_t H = h * s, W = w * s;
  const auto ytaps = detail::cubic_taps(H, s);
  const auto xtaps = detail::cubic_taps(W, s);
  const T* src = lr.data();

  // horizontal pass: (h, W, C) in double
  std::vector<double> tmp(static_cast<std::size_t>(h * W * C));
  for (std::int64_t y = 0; y < h; ++y) {
    const T* row = src + y * w * C;
    for (std::int64_t x = 0; x < W; ++x) {
      const auto& tp = xtaps[x];
      for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          std::int64_t ix = tp.base + k;
          ix = ix < 0 ? 0 : (ix >= w ? w - 1 : ix);
          acc += tp.w[k] * static_cast<double>(row[ix * C + c]);
        }
        tmp[(y * W + x) * C + c] = acc;
      }
    }
  }

  Tensor<T> out({H, W, C});
  T* dst = out.data();
  for (std::int64_t y = 0; y < H; ++y) {
    const auto& tp = ytaps[y];
    for (std::int64_t x = 0; x < W; ++x) {
      for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          std::int64_t iy = tp.base + k;
          iy = iy < 0 ? 0 : (iy >= h ? h - 1 : iy);
          acc += tp.w[k] * tmp[(iy * W + x) * C + c];
        }
        dst[(y * W + x) * C + c] = static_cast<T>(acc);
      }
    }
  }
  return out;
}

// Clamp to [lo, hi]; data-side only (no gradient), used at inference output.
template <typename T>
Tensor<T> clip(const Tensor<T>& x, T lo, T hi) {
  Tensor<T> out(x.shape());
  const T* p = x.data();
  T* q = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i)
    q[i] = p[i] < lo ? lo : (p[i] > hi ? hi : p[i]);
  return out;
}

}  // namespace smamba
