#pragma once

#include <vector>

#include "smamba/extractor.hpp"
#include "smamba/ops.hpp"

// Training objective: mean absolute error plus a weighted feature-space
// distance. The feature term takes the root of the squared differences
// summed over the whole batch, then divides by the batch size, so batch
// members are coupled and the loss must be differentiated as one graph.

namespace smamba {

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& sr, const Tensor<T>& hr) {
  require_same_shape(sr, hr, "l1_loss");
  return mean(abs(sub(sr, hr)));
}

template <typename T>
Tensor<T> l1_loss(const std::vector<Tensor<T>>& sr,
                  const std::vector<Tensor<T>>& hr) {
  if (sr.size() != hr.size() || sr.empty())
    throw ShapeError("l1_loss: batch size mismatch or empty batch");
  Tensor<T> acc;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    Tensor<T> li = l1_loss(sr[i], hr[i]);
    acc = acc.defined() ? add(acc, li) : li;
  }
  return scale(acc, T(1.0 / double(sr.size())));
}

template <typename T>
Tensor<T> perceptual_loss(const std::vector<Tensor<T>>& sr,
                          const std::vector<Tensor<T>>& hr,
                          const FeatureExtractor<T>& phi) {
  if (sr.size() != hr.size() || sr.empty())
    throw ShapeError("perceptual_loss: batch size mismatch or empty batch");
  Tensor<T> acc;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    Tensor<T> d = sub(phi(sr[i]), phi(hr[i]));
    Tensor<T> sq = sum(mul(d, d));
    acc = acc.defined() ? add(acc, sq) : sq;
  }
  return scale(sqrt(acc), T(1.0 / double(sr.size())));
}

template <typename T>
Tensor<T> perceptual_loss(const Tensor<T>& sr, const Tensor<T>& hr,
                          const FeatureExtractor<T>& phi) {
  return perceptual_loss(std::vector<Tensor<T>>{sr},
                         std::vector<Tensor<T>>{hr}, phi);
}

template <typename T>
struct LossParts {
  Tensor<T> l1, perceptual, total;
};

// With beta == 0 the extractor is never touched (it may be null).
template <typename T>
LossParts<T> total_loss(const std::vector<Tensor<T>>& sr,
                        const std::vector<Tensor<T>>& hr, double beta,
                        const FeatureExtractor<T>* phi) {
  if (beta < 0) throw DataError("total_loss: beta must be >= 0");
  LossParts<T> parts;
  parts.l1 = l1_loss(sr, hr);
  if (beta > 0) {
    if (!phi) throw DataError("total_loss: beta > 0 needs an extractor");
    parts.perceptual = perceptual_loss(sr, hr, *phi);
    parts.total = add(parts.l1, scale(parts.perceptual, T(beta)));
  } else {
    parts.perceptual = Tensor<T>::scalar(T(0));
    parts.total = parts.l1;
  }
  return parts;
}

}  // namespace smamba
