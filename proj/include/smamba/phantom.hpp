#pragma once

#include <cstdint>

#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

// Synthetic MR-like slices: dark background, nested ellipses of distinct
// intensities, band-limited texture inside the outer ellipse, and a mild
// multiplicative bias field. Values stay in [0,1]; corners stay dark.

namespace smamba {

Tensor<double> phantom_slice(std::int64_t H, std::int64_t W, Rng& rng);

}  // namespace smamba
