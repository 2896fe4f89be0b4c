#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "smamba/tensor.hpp"

// Standard image-quality scores in double precision. PSNR of identical
// images is +infinity, serialized as "inf" by format_metric.

namespace smamba {

inline double psnr(const Tensor<double>& a, const Tensor<double>& b,
                   double peak = 1.0) {
  require_same_shape(a, b, "psnr");
  const double* pa = a.data();
  const double* pb = b.data();
  const std::int64_t n = a.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  const double mse = acc / double(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// peak 1.0, averaged over valid (fully inside) window positions.
inline double ssim(const Tensor<double>& a, const Tensor<double>& b) {
  require_same_shape(a, b, "ssim");
  if (a.ndim() != 3 || a.size(2) != 1)
    throw ShapeError("ssim: expected (h,w,1), got " + shape_str(a.shape()));
  const std::int64_t h = a.size(0), w = a.size(1);
  constexpr int kWin = 11;
  if (h < kWin || w < kWin)
    throw DataError("ssim: image smaller than the 11x11 window");
  static const std::vector<double> kernel = [] {
    std::vector<double> k(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - (kWin - 1) / 2.0;
      k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  constexpr double kC1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double kC2 = (0.03 * 1.0) * (0.03 * 1.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double total = 0.0;
  const std::int64_t ny = h - kWin + 1, nx = w - kWin + 1;
  for (std::int64_t y0 = 0; y0 < ny; ++y0)
    for (std::int64_t x0 = 0; x0 < nx; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double wgt = kernel[i] * kernel[j];
          const double va = pa[(y0 + i) * w + (x0 + j)];
          const double vb = pb[(y0 + i) * w + (x0 + j)];
          ma += wgt * va;
          mb += wgt * vb;
          saa += wgt * va * va;
          sbb += wgt * vb * vb;
          sab += wgt * va * vb;
        }
      const double vara = saa - ma * ma;
      const double varb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
               ((ma * ma + mb * mb + kC1) * (vara + varb + kC2));
    }
  return total / double(ny * nx);
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace smamba
