#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "smamba/ops.hpp"
#include "smamba/ssm.hpp"
#include "smamba/tensor.hpp"

// Four directional linearizations of an (H, W, C) grid and their learned
// softmax-weighted fusion.  Traversal order is pinned:
//   d0 row-major, d1 = reverse(d0), d2 column-major, d3 = reverse(d2)
// e.g. grid [[1,2],[3,4]] -> d0 [1,2,3,4], d1 [4,3,2,1], d2 [1,3,2,4],
// d3 [4,2,3,1].  Each scanned sequence is re-indexed back to grid order
// before the weighted sum, so the four contributions are pixel-aligned.

namespace smamba {

struct DirPerms {
  std::array<std::vector<std::int64_t>, 4> fwd;  // seq[k] = grid[fwd[d][k]]
  std::array<std::vector<std::int64_t>, 4> inv;  // grid[j] = seq[inv[d][j]]
};

inline DirPerms build_dir_perms(std::int64_t H, std::int64_t W) {
  const std::int64_t L = H * W;
  DirPerms p;
  for (auto& v : p.fwd) v.resize(L);
  for (auto& v : p.inv) v.resize(L);
  for (std::int64_t k = 0; k < L; ++k) {
    p.fwd[0][k] = k;
    p.fwd[1][k] = L - 1 - k;
    const std::int64_t y = k % H, x = k / H;  // column-major walk
    p.fwd[2][k] = y * W + x;
  }
  // separate pass: fwd[2] must be complete before it is read back to front
  for (std::int64_t k = 0; k < L; ++k) p.fwd[3][k] = p.fwd[2][L - 1 - k];
  for (int d = 0; d < 4; ++d)
    for (std::int64_t k = 0; k < L; ++k) p.inv[d][p.fwd[d][k]] = k;
  return p;
}

template <typename T>
struct DirectionWeights {
  Tensor<T> logits;  // (4), zero init = uniform fusion
};

template <typename T>
DirectionWeights<T> direction_weights_init() {
  return DirectionWeights<T>{Tensor<T>::zeros({4})};
}

// grid (H, W, C) -> four (L, C) sequences in the pinned traversal order.
template <typename T>
std::array<Tensor<T>, 4> scan_expand(const Tensor<T>& grid) {
  if (grid.ndim() != 3)
    throw ShapeError("scan_expand: grid " + shape_str(grid.shape()));
  const std::int64_t H = grid.size(0), W = grid.size(1), C = grid.size(2);
  const DirPerms perms = build_dir_perms(H, W);
  Tensor<T> x = reshape(grid, {H * W, C});
  std::array<Tensor<T>, 4> seqs;
  seqs[0] = x;
  for (int d = 1; d < 4; ++d) seqs[d] = gather_rows(x, perms.fwd[d]);
  return seqs;
}

// Re-index the four (L, C) scan outputs back to grid order and blend with
// softmax(logits).  Equal logits make this the plain four-direction mean.
template <typename T>
Tensor<T> scan_merge(const std::array<Tensor<T>, 4>& ys,
                     const Tensor<T>& logits, std::int64_t H,
                     std::int64_t W) {
  const std::int64_t L = H * W;
  for (const auto& y : ys)
    if (y.ndim() != 2 || y.size(0) != L)
      throw ShapeError("scan_merge: sequence " + shape_str(y.shape()) +
                       " for grid " + std::to_string(H) + "x" +
                       std::to_string(W));
  if (logits.numel() != 4)
    throw ShapeError("scan_merge: logits " + shape_str(logits.shape()));
  const DirPerms perms = build_dir_perms(H, W);
  Tensor<T> w = softmax(logits, 0);
  Tensor<T> fused;
  for (int d = 0; d < 4; ++d) {
    Tensor<T> g = (d == 0) ? ys[0] : gather_rows(ys[d], perms.inv[d]);
    Tensor<T> term = smul(g, slice(w, 0, d, d + 1));
    fused = d == 0 ? term : add(fused, term);
  }
  return reshape(fused, {H, W, ys[0].size(1)});
}

// Full module with one shared parameter set: the input projections and the
// discretization depend only on the per-position feature vector, so they are
// computed once in grid order and permuted per direction — elementwise
// identical to projecting each permuted sequence separately.
template <typename T>
Tensor<T> iss2d_forward(const Tensor<T>& grid, const SSMParams<T>& p,
                        const Tensor<T>& logits,
                        const Tensor<T>* d_override = nullptr,
                        std::int64_t chunk = 0) {
  if (grid.ndim() != 3)
    throw ShapeError("iss2d_forward: grid " + shape_str(grid.shape()));
  const std::int64_t H = grid.size(0), W = grid.size(1), C = grid.size(2);
  const std::int64_t L = H * W;
  const DirPerms perms = build_dir_perms(H, W);

  Tensor<T> x = reshape(grid, {L, C});
  Tensor<T> delta = softplus_t(linear(x, p.w_delta_w, p.w_delta_b));
  Tensor<T> bmat = linear(x, p.w_b);
  Tensor<T> cmat = linear(x, p.w_c);
  Tensor<T> a = scale(exp(p.a_log), T(-1));
  DiscretePair<T> pair = zoh_discretize(delta, a, bmat);
  const Tensor<T>& d = d_override ? *d_override : p.d_skip;

  std::array<Tensor<T>, 4> ys;
  for (int dd = 0; dd < 4; ++dd) {
    Tensor<T> ab = dd == 0 ? pair.a_bar : gather_rows(pair.a_bar,
                                                      perms.fwd[dd]);
    Tensor<T> bb = dd == 0 ? pair.b_bar : gather_rows(pair.b_bar,
                                                      perms.fwd[dd]);
    Tensor<T> cd = dd == 0 ? cmat : gather_rows(cmat, perms.fwd[dd]);
    Tensor<T> xd = dd == 0 ? x : gather_rows(x, perms.fwd[dd]);
    ys[dd] = ssm_recurrence(ab, bb, cd, xd, d, chunk);
  }
  return scan_merge(ys, logits, H, W);
}

// Ablation path: four independent parameter sets, one per direction.
template <typename T>
Tensor<T> iss2d_forward_multi(const Tensor<T>& grid,
                              const std::array<SSMParams<T>, 4>& ps,
                              const Tensor<T>& logits,
                              const Tensor<T>* d_override = nullptr,
                              std::int64_t chunk = 0) {
  if (grid.ndim() != 3)
    throw ShapeError("iss2d_forward_multi: grid " + shape_str(grid.shape()));
  const std::int64_t H = grid.size(0), W = grid.size(1);
  std::array<Tensor<T>, 4> seqs = scan_expand(grid);
  std::array<Tensor<T>, 4> ys;
  for (int d = 0; d < 4; ++d)
    ys[d] = selective_scan(seqs[d], ps[d], chunk, d_override);
  return scan_merge(ys, logits, H, W);
}

}  // namespace smamba
