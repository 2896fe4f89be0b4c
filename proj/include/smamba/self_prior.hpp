#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

// Training-time occlusion: drop a small constant-brightness block at a random
// position inside a central region of interest, so the network must inpaint
// from surrounding context. Evaluation is a strict identity.

namespace smamba {

struct ROISpec {
  std::int64_t origin_y = 0, origin_x = 0;
  std::int64_t height = 0, width = 0;
};

// Central region: origin at a quarter of each extent, size half of each.
inline ROISpec default_roi(std::int64_t h, std::int64_t w) {
  if (h < 10 || w < 10)
    throw DataError("default_roi: image " + std::to_string(h) + "x" +
                    std::to_string(w) + " too small (need >= 10 per side)");
  return {h / 4, w / 4, h / 2, w / 2};
}

struct PerturbConfig {
  double prob = 1.0;                 // chance a training sample is perturbed
  std::int64_t block = 5;            // block side length in pixels
  std::string mode = "replace";      // "replace" or "add"
};

struct PerturbRecord {
  std::int64_t block_y = -1, block_x = -1;
  double brightness = 0.0;
  bool applied = false;
};

inline std::string perturb_record_str(const PerturbRecord& r) {
  if (!r.applied) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%lld:%lld:%.6g",
                static_cast<long long>(r.block_y),
                static_cast<long long>(r.block_x), r.brightness);
  return buf;
}

// Copies the image and overwrites one block*block square whose top-left is
// uniform over all in-ROI positions; the fill value is uniform in [0,1].
// Draw order: [gate iff prob < 1], y, x, brightness. Eval mode and a failed
// gate return the input tensor untouched.
template <typename T>
Tensor<T> perturb(const Tensor<T>& img, const ROISpec& roi,
                  const PerturbConfig& pc, Rng& rng, bool training,
                  PerturbRecord* rec = nullptr) {
  if (img.ndim() != 3 || img.size(2) != 1)
    throw ShapeError("perturb: expected (h,w,1) image, got " +
                     shape_str(img.shape()));
  const std::int64_t h = img.size(0), w = img.size(1);
  if (roi.origin_y < 0 || roi.origin_x < 0 || roi.height < pc.block ||
      roi.width < pc.block || roi.origin_y + roi.height > h ||
      roi.origin_x + roi.width > w || pc.block < 1)
    throw DataError("perturb: block " + std::to_string(pc.block) +
                    " does not fit ROI (" + std::to_string(roi.origin_y) +
                    "," + std::to_string(roi.origin_x) + ")+" +
                    std::to_string(roi.height) + "x" +
                    std::to_string(roi.width) + " inside " +
                    std::to_string(h) + "x" + std::to_string(w));
  if (pc.mode != "replace" && pc.mode != "add")
    throw DataError("perturb: unknown mode '" + pc.mode + "'");
  PerturbRecord r;
  if (!training || (pc.prob < 1.0 && rng.uniform(0.0, 1.0) >= pc.prob)) {
    if (rec) *rec = r;
    return img;
  }
  r.block_y = rng.uniform_int(roi.origin_y, roi.origin_y + roi.height -
                                                pc.block);
  r.block_x = rng.uniform_int(roi.origin_x, roi.origin_x + roi.width -
                                                pc.block);
  r.brightness = rng.uniform(0.0, 1.0);
  r.applied = true;
  Tensor<T> out = img.clone();
  T* p = out.data();
  for (std::int64_t y = r.block_y; y < r.block_y + pc.block; ++y)
    for (std::int64_t x = r.block_x; x < r.block_x + pc.block; ++x) {
      T& px = p[y * w + x];
      if (pc.mode == "replace") {
        px = T(r.brightness);
      } else {
        px = T(std::min(1.0, std::max(0.0, double(px) + r.brightness)));
      }
    }
  if (rec) *rec = r;
  return out;
}

}  // namespace smamba
