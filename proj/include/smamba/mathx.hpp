#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace smamba {

// Branch-free float exp/expm1 built for auto-vectorized inner loops.  About
// 2-3 ulp worst case, which is far inside every tolerance used here; the
// double overloads defer to libm because the high-precision reference paths
// run in double and are not speed critical.
//
// Range reduction: u = k*ln2 + r with |r| <= ln2/2, via nearbyint (rounds to
// even, maps to a single rounding instruction when vectorized).  exp(r) and
// expm1(r) use Taylor polynomials whose truncation error is below float ulp
// on the reduced interval.

namespace detail {

inline float exp_poly_q(float r) {
  // q(r) = 1/2 + r/6 + r^2/24 + r^3/120 + r^4/720 + r^5/5040
  // so that expm1(r) = r + r*r*q(r) exactly to float precision on |r|<=0.347.
  float q = 1.0f / 5040.0f;
  q = q * r + 1.0f / 720.0f;
  q = q * r + 1.0f / 120.0f;
  q = q * r + 1.0f / 24.0f;
  q = q * r + 1.0f / 6.0f;
  q = q * r + 0.5f;
  return q;
}

}  // namespace detail

inline float fast_expm1(float u) {
  constexpr float kInvLn2 = 1.4426950408889634f;
  constexpr float kLn2Hi = 0.693359375f;        // exact in float
  constexpr float kLn2Lo = -2.12194440e-4f;
  u = std::min(88.0f, std::max(-87.0f, u));
  float kf = std::nearbyint(u * kInvLn2);
  float r = (u - kf * kLn2Hi) - kf * kLn2Lo;
  float p = r + r * r * detail::exp_poly_q(r);  // expm1(r)
  std::int32_t k = static_cast<std::int32_t>(kf);
  float s = std::bit_cast<float>((k + 127) << 23);  // 2^k, k in [-126, 127]
  // 2^k * (p + 1) - 1, arranged so k == 0 degrades to p with no cancellation.
  return s * p + (s - 1.0f);
}

inline float fast_exp(float u) {
  constexpr float kInvLn2 = 1.4426950408889634f;
  constexpr float kLn2Hi = 0.693359375f;
  constexpr float kLn2Lo = -2.12194440e-4f;
  u = std::min(88.0f, std::max(-87.0f, u));
  float kf = std::nearbyint(u * kInvLn2);
  float r = (u - kf * kLn2Hi) - kf * kLn2Lo;
  float p = 1.0f + (r + r * r * detail::exp_poly_q(r));
  std::int32_t k = static_cast<std::int32_t>(kf);
  float s = std::bit_cast<float>((k + 127) << 23);
  return s * p;
}

inline double fast_expm1(double u) { return std::expm1(u); }
inline double fast_exp(double u) { return std::exp(u); }

template <typename T>
inline T fsigmoid(T x) {
  return T(1) / (T(1) + fast_exp(-x));
}

// log(1 + exp(x)) without overflow for large |x|.
template <typename T>
inline T softplus(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Inverse of softplus, used to seed bias terms so the forward pass starts at
// a chosen positive value.
inline double softplus_inv(double y) {
  return std::log(std::expm1(y));
}

template <typename T>
inline T fsilu(T x) {
  return x * fsigmoid(x);
}

}  // namespace smamba
