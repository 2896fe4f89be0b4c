#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smamba/tensor.hpp"

// Bias-corrected Adam. Moments are kept in double regardless of the
// parameter dtype so two runs of the same schedule update bit-identically.

namespace smamba {

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (lr <= 0) throw DataError("adam: lr must be > 0");
  }

  void step(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
      }
    }
    if (m_.size() != params.size())
      throw ShapeError("adam: parameter list changed size");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor<T>& p = params[i].second;
      if (static_cast<std::int64_t>(m_[i].size()) != p.numel())
        throw ShapeError("adam: parameter '" + params[i].first +
                         "' changed shape");
      const T* g = p.grad_data();
      T* w = p.data();
      double* m = m_[i].data();
      double* v = v_[i].data();
      const std::int64_t n = p.numel();
      for (std::int64_t j = 0; j < n; ++j) {
        const double gj = g ? double(g[j]) : 0.0;
        m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
        v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        w[j] = T(double(w[j]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::int64_t t() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace smamba
