#include "smamba/degrade.hpp"

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <mutex>
#include <vector>

namespace smamba {
namespace {

// FFTW planning is not thread-safe; execution with plan-owned arrays is
// serialized here too since callers may degrade slices from parallel workers.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Tensor<double> kspace_crop(const Tensor<double>& hr, std::int64_t s) {
  if (hr.ndim() != 3 || hr.size(2) != 1)
    throw ShapeError("degrade: expected (H,W,1) image, got " +
                     shape_str(hr.shape()));
  const std::int64_t H = hr.size(0), W = hr.size(1);
  if (s < 1 || H % s != 0 || W % s != 0)
    throw DataError("degrade: extents " + std::to_string(H) + "x" +
                    std::to_string(W) + " not divisible by scale " +
                    std::to_string(s));
  const std::int64_t Hs = H / s, Ws = W / s;
  if (Hs % 2 != 0 || Ws % 2 != 0)
    throw DataError("degrade: cropped extents must be even for a centered "
                    "band, got " +
                    std::to_string(Hs) + "x" + std::to_string(Ws));
  std::vector<std::complex<double>> freq(static_cast<std::size_t>(H) * W);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(H) * W);
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(H), static_cast<int>(W),
                                      buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    const double* p = hr.data();
    for (std::int64_t i = 0; i < H * W; ++i) {
      buf[i][0] = p[i];
      buf[i][1] = 0.0;
    }
    fftw_execute(plan);
    for (std::int64_t i = 0; i < H * W; ++i)
      freq[static_cast<std::size_t>(i)] = {buf[i][0], buf[i][1]};
    fftw_destroy_plan(plan);
    fftw_free(buf);
  }
  // Keep the DC-centered band: signed frequency nu in [-Hs/2, Hs/2-1],
  // stored at (nu mod Hs) so the small array is again in DFT order.
  Tensor<double> out({Hs, Ws, 2});
  double* q = out.data();
  for (std::int64_t ny = -Hs / 2; ny < Hs / 2; ++ny)
    for (std::int64_t nx = -Ws / 2; nx < Ws / 2; ++nx) {
      const std::int64_t sy = (ny + H) % H, sx = (nx + W) % W;
      const std::int64_t dy = (ny + Hs) % Hs, dx = (nx + Ws) % Ws;
      const auto v = freq[static_cast<std::size_t>(sy * W + sx)];
      q[(dy * Ws + dx) * 2] = v.real();
      q[(dy * Ws + dx) * 2 + 1] = v.imag();
    }
  return out;
}

Tensor<double> degrade_kspace(const Tensor<double>& hr, std::int64_t s,
                              double kspace_noise_std, Rng* noise_rng) {
  Tensor<double> spec = kspace_crop(hr, s);
  const std::int64_t H = hr.size(0), W = hr.size(1);
  const std::int64_t Hs = H / s, Ws = W / s;
  if (kspace_noise_std > 0.0) {
    if (!noise_rng)
      throw DataError("degrade: kspace_noise_std > 0 needs a generator");
    double* q = spec.data();
    // Spectrum entries scale with H*W, so express the knob in image units.
    const double amp = kspace_noise_std * double(H) * double(W);
    for (std::int64_t i = 0; i < Hs * Ws * 2; ++i)
      q[i] += noise_rng->normal(0.0, amp);
  }
  Tensor<double> lr({Hs, Ws, 1});
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_complex* buf = fftw_alloc_complex(static_cast<std::size_t>(Hs) * Ws);
    fftw_plan plan =
        fftw_plan_dft_2d(static_cast<int>(Hs), static_cast<int>(Ws), buf, buf,
                         FFTW_BACKWARD, FFTW_ESTIMATE);
    const double* q = spec.data();
    for (std::int64_t i = 0; i < Hs * Ws; ++i) {
      buf[i][0] = q[2 * i];
      buf[i][1] = q[2 * i + 1];
    }
    fftw_execute(plan);
    double* p = lr.data();
    // Unnormalized inverse divided by H*W: the two transforms together then
    // map a constant image to the same constant (the required 1/s^2).
    const double scale = 1.0 / (double(H) * double(W));
    for (std::int64_t i = 0; i < Hs * Ws; ++i)
      p[i] = std::min(1.0, std::max(0.0, buf[i][0] * scale));
    fftw_destroy_plan(plan);
    fftw_free(buf);
  }
  return lr;
}

}  // namespace smamba
