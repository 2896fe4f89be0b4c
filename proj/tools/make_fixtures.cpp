// Regenerates the committed regression fixtures: a seeded scan instance
// whose inputs are stored in float32 and whose expected output is computed
// by the double-precision sequential recurrence on those exact values.
// Run from the repository root; writes into fixtures/scan_l64_c8_n16/.

#include <cstdio>
#include <filesystem>
#include <string>

#include "smamba/image_io.hpp"
#include "smamba/rng.hpp"
#include "smamba/scan_kernels.hpp"
#include "smamba/srt.hpp"

using namespace smamba;

int main(int argc, char** argv) {
  const std::string dir = argc > 1 ? argv[1] : "fixtures/scan_l64_c8_n16";
  std::filesystem::create_directories(dir);
  const std::int64_t L = 64, C = 8, N = 16;
  Rng rng(20240817);
  const auto fill = [&](Tensor<float> t, double lo, double hi) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] = float(rng.uniform(lo, hi));
    return t;
  };
  // Decay factors in (0,1) mimic discretized stable dynamics.
  Tensor<float> abar = fill(Tensor<float>({L, C, N}), 0.05, 0.99);
  Tensor<float> bbar = fill(Tensor<float>({L, C, N}), -0.5, 0.5);
  Tensor<float> cseq = fill(Tensor<float>({L, N}), -1.0, 1.0);
  Tensor<float> x = fill(Tensor<float>({L, C}), -1.0, 1.0);
  Tensor<float> d = fill(Tensor<float>({C}), -0.5, 0.5);
  Tensor<double> y({L, C});
  const Tensor<double> ad = cast<double>(abar), bd = cast<double>(bbar),
                       cd = cast<double>(cseq), xd = cast<double>(x),
                       dd = cast<double>(d);
  scan::forward_serial<double>(ad.data(), bd.data(), cd.data(), xd.data(),
                               dd.data(), y.data(), nullptr, L, C, N);
  srt_save(dir + "/abar.srt", abar);
  srt_save(dir + "/bbar.srt", bbar);
  srt_save(dir + "/cseq.srt", cseq);
  srt_save(dir + "/x.srt", x);
  srt_save(dir + "/d.srt", d);
  srt_save(dir + "/y_expected_f64.srt", y);
  std::printf("fixtures written to %s\n", dir.c_str());
  return 0;
}
