#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "smamba/ops.hpp"
#include "smamba/rng.hpp"
#include "smamba/srt.hpp"

// Frozen feature extractor for the perceptual loss: four stride-2 3x3
// convolutions with SiLU, mapping (H,W,1) to (H/16,W/16,128). Weights are
// seeded-random by default or loaded from an SRT weight pack; they never
// train, but gradients flow through the inputs.

namespace smamba {

inline constexpr char kPackMagic[4] = {'S', 'F', 'E', 'P'};

template <typename T>
class FeatureExtractor {
 public:
  static constexpr std::array<std::int64_t, 4> kChannels = {16, 32, 64, 128};

  explicit FeatureExtractor(std::uint64_t seed) {
    Rng rng(seed, 9);
    std::int64_t ci = 1;
    for (int s = 0; s < 4; ++s) {
      const std::int64_t co = kChannels[s];
      const double bound = 1.0 / std::sqrt(9.0 * double(ci));
      Tensor<T> w({3, 3, ci, co});
      T* p = w.data();
      for (std::int64_t i = 0; i < w.numel(); ++i)
        p[i] = T(rng.uniform(-bound, bound));
      weights_.emplace_back("stage" + std::to_string(s) + ".w", w);
      weights_.emplace_back("stage" + std::to_string(s) + ".b",
                            Tensor<T>::zeros({co}));
      ci = co;
    }
  }

  explicit FeatureExtractor(const std::string& pack_path)
      : FeatureExtractor(std::uint64_t{0}) {
    std::ifstream is(pack_path, std::ios::binary);
    if (!is) throw DataError("extractor: cannot open pack " + pack_path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != std::string(kPackMagic, 4))
      throw DataError("extractor: bad pack magic in " + pack_path);
    const std::uint32_t count = detail::get_u32le(is);
    if (count != weights_.size())
      throw DataError("extractor: pack holds " + std::to_string(count) +
                      " tensors, expected " +
                      std::to_string(weights_.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
      const int lo = is.get(), hi = is.get();
      if (lo < 0 || hi < 0) throw DataError("extractor: truncated pack");
      std::string name(static_cast<std::size_t>(lo | (hi << 8)), '\0');
      is.read(name.data(), static_cast<std::streamsize>(name.size()));
      Tensor<T> t = srt_read<T>(is);
      bool found = false;
      for (auto& [n, dst] : weights_)
        if (n == name) {
          if (dst.shape() != t.shape())
            throw DataError("extractor: pack tensor '" + name +
                            "' has shape " + shape_str(t.shape()) +
                            ", expected " + shape_str(dst.shape()));
          std::copy(t.data(), t.data() + t.numel(), dst.data());
          found = true;
          break;
        }
      if (!found)
        throw DataError("extractor: unknown pack tensor '" + name + "'");
    }
  }

  void save_pack(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("extractor: cannot write pack " + path);
    os.write(kPackMagic, 4);
    detail::put_u32le(os, static_cast<std::uint32_t>(weights_.size()));
    for (const auto& [name, t] : weights_) {
      const auto len = static_cast<std::uint16_t>(name.size());
      os.put(static_cast<char>(len & 0xff));
      os.put(static_cast<char>(len >> 8));
      os.write(name.data(), len);
      srt_write(os, t);
    }
    if (!os) throw DataError("extractor: pack write failed: " + path);
  }

  Tensor<T> operator()(const Tensor<T>& img) const {
    if (img.ndim() != 3 || img.size(2) != 1)
      throw ShapeError("extractor: expected (h,w,1), got " +
                       shape_str(img.shape()));
    if (img.size(0) < 16 || img.size(1) < 16)
      throw DataError("extractor: image " + std::to_string(img.size(0)) +
                      "x" + std::to_string(img.size(1)) +
                      " too small for four 2x strides (need >= 16)");
    Tensor<T> x = img;
    for (int s = 0; s < 4; ++s)
      x = silu(conv2d(x, weights_[2 * s].second, weights_[2 * s + 1].second,
                      2, 1));
    return x;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& weights() const {
    return weights_;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> weights_;
};

}  // namespace smamba
