#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>

#include "smamba/rng.hpp"
#include "smamba/tensor.hpp"

// Hand-rolled check macros: first failure prints [FAIL] with location and
// exits 1, so ctest reports the exact broken property.

#define REQUIRE(cond)                                                        \
  do {                                                                       \
    if (!(cond)) {                                                           \
      std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  " << #cond \
                << "\n";                                                     \
      std::exit(1);                                                          \
    }                                                                        \
  } while (0)

#define REQUIRE_MSG(cond, msg)                                               \
  do {                                                                       \
    if (!(cond)) {                                                           \
      std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  " << #cond \
                << "  (" << msg << ")\n";                                    \
      std::exit(1);                                                          \
    }                                                                        \
  } while (0)

#define REQUIRE_NEAR(a, b, tol)                                              \
  do {                                                                       \
    const double a_ = double(a), b_ = double(b), tol_ = double(tol);         \
    if (!(std::abs(a_ - b_) <= tol_)) {                                      \
      std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  |" << #a   \
                << " - " << #b << "| = " << std::abs(a_ - b_) << " > "       \
                << tol_ << "  (" << a_ << " vs " << b_ << ")\n";             \
      std::exit(1);                                                          \
    }                                                                        \
  } while (0)

#define REQUIRE_THROWS_AS(expr, Ex)                                          \
  do {                                                                       \
    bool caught_ = false;                                                    \
    try {                                                                    \
      (void)(expr);                                                          \
    } catch (const Ex&) {                                                    \
      caught_ = true;                                                        \
    }                                                                        \
    if (!caught_) {                                                          \
      std::cerr << "[FAIL] " << __FILE__ << ":" << __LINE__ << "  " << #expr \
                << " did not throw " << #Ex << "\n";                         \
      std::exit(1);                                                          \
    }                                                                        \
  } while (0)

namespace testsup {

inline void pass(const std::string& name) {
  std::cout << "[PASS] " << name << "\n";
}

template <typename T>
smamba::Tensor<T> filled(smamba::Shape shape, smamba::Rng& rng,
                         double lo = -1.0, double hi = 1.0) {
  smamba::Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = T(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const smamba::Tensor<T>& a, const smamba::Tensor<T>& b) {
  smamba::require_same_shape(a, b, "max_abs_diff");
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const smamba::Tensor<T>& a, const smamba::Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(T)) != 0) return false;
  return true;
}

inline std::string source_dir() {
#ifdef SMAMBA_SOURCE_DIR
  return SMAMBA_SOURCE_DIR;
#else
  return ".";
#endif
}

}  // namespace testsup
