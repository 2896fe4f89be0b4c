// Image-quality scores: closed-form cases, independent re-evaluations,
// symmetry and monotonicity, and the text formatting used in reports.

#include "support.hpp"

#include "smamba/metrics.hpp"

using namespace smamba;
using testsup::filled;
using testsup::pass;
using Td = Tensor<double>;

namespace {

void psnr_closed_forms() {
  Rng rng(110);
  Td a = filled<double>({16, 16, 1}, rng, 0.0, 1.0);
  REQUIRE(std::isinf(psnr(a, a)));
  REQUIRE(psnr(a, a) > 0);

  // constant offset 0.1: mse 0.01, 10*log10(1/0.01) = 20 dB
  Td c1 = Td::full({16, 16, 1}, 0.5), c2 = Td::full({16, 16, 1}, 0.6);
  REQUIRE_NEAR(psnr(c1, c2), 20.0, 1e-9);
  // peak rescales: peak 2 adds 10*log10(4)
  REQUIRE_NEAR(psnr(c1, c2, 2.0), 20.0 + 10.0 * std::log10(4.0), 1e-9);
  REQUIRE_THROWS_AS(psnr(c1, Td::zeros({8, 8, 1})), ShapeError);
  pass("identical images give +inf; 0.1 offset gives exactly 20 dB");
}

void psnr_oracle_and_symmetry() {
  Rng rng(111);
  Td a = filled<double>({24, 20, 1}, rng, 0.0, 1.0);
  Td b = filled<double>({24, 20, 1}, rng, 0.0, 1.0);
  long double acc = 0.0L;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const long double d =
        (long double)a.data()[i] - (long double)b.data()[i];
    acc += d * d;
  }
  const double want =
      10.0 * std::log10(1.0 / double(acc / (long double)a.numel()));
  REQUIRE_NEAR(psnr(a, b), want, 1e-10);
  REQUIRE(psnr(a, b) == psnr(b, a));
  pass("random-pair score matches extended-precision arithmetic");
}

void psnr_monotonicity() {
  Rng rng(112);
  Td a = filled<double>({16, 16, 1}, rng, 0.2, 0.8);
  Td noise = filled<double>({16, 16, 1}, rng, -1.0, 1.0);
  auto with_noise = [&](double amp) {
    Td b = a.clone();
    for (std::int64_t i = 0; i < b.numel(); ++i)
      b.data()[i] += amp * noise.data()[i];
    return psnr(a, b);
  };
  const double p1 = with_noise(0.01), p2 = with_noise(0.02),
               p4 = with_noise(0.04);
  REQUIRE(p1 > p2 && p2 > p4);
  // halving the amplitude raises the score by exactly 20*log10(2)
  REQUIRE_NEAR(p1 - p2, 20.0 * std::log10(2.0), 1e-9);
  REQUIRE_NEAR(p2 - p4, 20.0 * std::log10(2.0), 1e-9);
  pass("more noise scores lower; each halving adds 6.0206 dB");
}

// Independent windowed evaluation with an explicitly materialized 2-D
// Gaussian mask.
double ssim_reference(const Td& a, const Td& b) {
  const std::int64_t h = a.size(0), w = a.size(1);
  const int win = 11;
  double mask[11][11];
  double sum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double dy = i - 5.0, dx = j - 5.0;
      mask[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      sum += mask[i][j];
    }
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) mask[i][j] /= sum;
  const double C1 = 1e-4, C2 = 9e-4;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y0 = 0; y0 + win <= h; ++y0)
    for (std::int64_t x0 = 0; x0 + win <= w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = mask[i][j];
          const double va = a.data()[(y0 + i) * w + x0 + j];
          const double vb = b.data()[(y0 + i) * w + x0 + j];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb,
                   cv = sab - ma * mb;
      total += ((2 * ma * mb + C1) * (2 * cv + C2)) /
               ((ma * ma + mb * mb + C1) * (va + vb + C2));
      ++count;
    }
  return total / double(count);
}

void ssim_basics() {
  Rng rng(113);
  Td a = filled<double>({20, 24, 1}, rng, 0.0, 1.0);
  REQUIRE_NEAR(ssim(a, a), 1.0, 1e-9);

  Td b = filled<double>({20, 24, 1}, rng, 0.0, 1.0);
  REQUIRE_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  REQUIRE(ssim(a, b) >= -1.0 && ssim(a, b) <= 1.0);
  REQUIRE(ssim(a, b) < 0.999);

  // constant pair: variance terms drop out, closed form in the means
  const double u = 0.25, v = 0.75;
  Td cu = Td::full({16, 16, 1}, u), cv = Td::full({16, 16, 1}, v);
  const double want = (2 * u * v + 1e-4) / (u * u + v * v + 1e-4);
  REQUIRE_NEAR(ssim(cu, cv), want, 1e-12);

  REQUIRE_THROWS_AS(ssim(Td::zeros({10, 16, 1}), Td::zeros({10, 16, 1})),
                    DataError);
  REQUIRE_THROWS_AS(ssim(a, Td::zeros({20, 24, 2})), ShapeError);
  pass("self-similarity 1, symmetric, bounded, constant closed form");
}

void ssim_matches_reference() {
  Rng rng(114);
  for (int it = 0; it < 3; ++it) {
    Td a = filled<double>({16 + it, 21, 1}, rng, 0.0, 1.0);
    Td b = filled<double>({16 + it, 21, 1}, rng, 0.0, 1.0);
    const double got = ssim(a, b), want = ssim_reference(a, b);
    REQUIRE_MSG(std::abs(got - want) <= 1e-12,
                "reference gap " << std::abs(got - want));
  }
  // structure inversion: a binary grid against its negative scores far
  // below its score against a lightly noised copy
  Td g({16, 16, 1});
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t x = 0; x < 16; ++x)
      g.data()[y * 16 + x] = ((y / 4 + x / 4) % 2) ? 0.9 : 0.1;
  Td inv = g.clone();
  for (std::int64_t i = 0; i < inv.numel(); ++i)
    inv.data()[i] = 1.0 - inv.data()[i];
  Td soft = g.clone();
  Rng nz(115);
  for (std::int64_t i = 0; i < soft.numel(); ++i)
    soft.data()[i] += nz.uniform(-0.02, 0.02);
  REQUIRE(ssim(g, inv) < 0.0);
  REQUIRE(ssim(g, soft) > 0.9);
  pass("windowed score matches the independent mask evaluation");
}

void metric_formatting() {
  REQUIRE(format_metric(std::numeric_limits<double>::infinity()) == "inf");
  REQUIRE(format_metric(-std::numeric_limits<double>::infinity()) == "-inf");
  REQUIRE(format_metric(1.23456789) == "1.234568");
  REQUIRE(format_metric(0.0) == "0.000000");
  REQUIRE(format_metric(28.5) == "28.500000");
  pass("scores render with six decimals; infinities as words");
}

}  // namespace

int main() {
  psnr_closed_forms();
  psnr_oracle_and_symmetry();
  psnr_monotonicity();
  ssim_basics();
  ssim_matches_reference();
  metric_formatting();
  std::cout << "test_metrics: all sections passed\n";
  return 0;
}
