#include "smamba/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace smamba {
namespace {

struct Ellipse {
  double cy, cx;    // center (pixels)
  double ay, ax;    // semi-axes (pixels)
  double ct, st;    // rotation cos/sin
  double value;
};

bool inside(const Ellipse& e, double y, double x) {
  const double dy = y - e.cy, dx = x - e.cx;
  const double u = (dx * e.ct + dy * e.st) / e.ax;
  const double v = (-dx * e.st + dy * e.ct) / e.ay;
  return u * u + v * v <= 1.0;
}

}  // namespace

Tensor<double> phantom_slice(std::int64_t H, std::int64_t W, Rng& rng) {
  if (H < 16 || W < 16)
    throw DataError("phantom: extents must be >= 16");
  const double background = rng.uniform(0.01, 0.04);

  const int count = static_cast<int>(rng.uniform_int(2, 5));
  // Disjoint intensity bands guarantee distinct values; shuffled so the
  // nesting order is not monotonically brighter.
  std::vector<double> values(count);
  for (int k = 0; k < count; ++k)
    values[k] = rng.uniform(0.2 + 0.7 * k / count,
                            0.2 + 0.7 * (k + 1) / count);
  std::shuffle(values.begin(), values.end(), rng.engine());

  std::vector<Ellipse> shells(count);
  const double theta = rng.uniform(0.0, 3.14159265358979323846);
  shells[0] = {rng.uniform(0.45, 0.55) * H, rng.uniform(0.45, 0.55) * W,
               rng.uniform(0.30, 0.40) * H, rng.uniform(0.28, 0.38) * W,
               std::cos(theta), std::sin(theta), values[0]};
  for (int k = 1; k < count; ++k) {
    const Ellipse& outer = shells[k - 1];
    const double f = rng.uniform(0.55, 0.75);
    // Jitter small enough that the shrunk ellipse stays inside its parent.
    const double slack = (1.0 - f) * 0.4;
    shells[k] = {outer.cy + rng.uniform(-slack, slack) * outer.ay,
                 outer.cx + rng.uniform(-slack, slack) * outer.ax,
                 outer.ay * f,
                 outer.ax * f,
                 outer.ct,
                 outer.st,
                 values[k]};
  }

  const int waves = 4;
  std::vector<double> wfy(waves), wfx(waves), wph(waves);
  for (int t = 0; t < waves; ++t) {
    wfy[t] = double(rng.uniform_int(1, 6));
    wfx[t] = double(rng.uniform_int(1, 6));
    wph[t] = rng.uniform(0.0, 6.28318530717958647692);
  }
  const double tex_amp = rng.uniform(0.02, 0.04);
  const double bias_amp = rng.uniform(0.05, 0.12);
  const double bias_cy = rng.uniform(0.0, double(H));
  const double bias_cx = rng.uniform(0.0, double(W));

  Tensor<double> img({H, W, 1});
  double* p = img.data();
  constexpr double kTwoPi = 6.28318530717958647692;
  constexpr double kPi = 3.14159265358979323846;
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      const double fy = double(y), fx = double(x);
      double v = background;
      bool in_outer = false;
      for (int k = 0; k < count; ++k)
        if (inside(shells[k], fy, fx)) {
          v = shells[k].value;
          in_outer = true;
        } else {
          break;  // shells are nested; outside one means outside the rest
        }
      if (in_outer) {
        double tex = 0.0;
        for (int t = 0; t < waves; ++t)
          tex += std::cos(kTwoPi * (wfy[t] * fy / H + wfx[t] * fx / W) +
                          wph[t]);
        v += tex_amp * tex;
      }
      const double bias = 1.0 + bias_amp * std::cos(kPi * (fy - bias_cy) / H) *
                                    std::cos(kPi * (fx - bias_cx) / W);
      v *= bias;
      p[y * W + x] = std::min(1.0, std::max(0.0, v));
    }
  return img;
}

}  // namespace smamba
