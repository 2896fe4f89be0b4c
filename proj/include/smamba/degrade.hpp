#pragma once

#include <cstdint>

#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

// Frequency-domain downsampling: forward DFT, centered low-frequency crop,
// inverse DFT, real part, 1/s^2 rescale (constant-preserving), clip to [0,1].

namespace smamba {

// Cropped complex spectrum of the unnormalized forward DFT, laid out in
// wrap-around (DC at index 0) order, interleaved re/im: (H/s, W/s, 2).
// The retained signed frequencies are [-H/(2s), H/(2s)-1] per axis.
Tensor<double> kspace_crop(const Tensor<double>& hr, std::int64_t s);

// Full degradation. Optional complex Gaussian noise (std in image-intensity
// units) is added to the cropped spectrum before the inverse transform.
Tensor<double> degrade_kspace(const Tensor<double>& hr, std::int64_t s,
                              double kspace_noise_std = 0.0,
                              Rng* noise_rng = nullptr);

}  // namespace smamba
