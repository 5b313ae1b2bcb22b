#pragma once

// Branch-free elementary functions for the hot noise/phase loops. Written so
// that GCC and Clang vectorize loops calling them (libm calls block that).
// Accuracy is within a couple of ulp over the documented domains.

#include <bit>
#include <cstdint>

namespace noisydiff::simd {

/// Natural log for u in (0, 1]; also correct for any positive normal double.
inline double log_positive(double u) noexcept {
  constexpr std::uint64_t kSqrtHalfBits = 0x3FE6A09E667F3BCDull;
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(u);
  const std::uint64_t shifted = bits - kSqrtHalfBits;
  const auto exponent = static_cast<std::int64_t>(shifted) >> 52;
  // mantissa rescaled into [sqrt(1/2), sqrt(2))
  const double m = std::bit_cast<double>(bits - (shifted & 0xFFF0000000000000ull));
  const double e = static_cast<double>(exponent);
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  double p = 1.0 / 21;
  p = p * s2 + 1.0 / 19;
  p = p * s2 + 1.0 / 17;
  p = p * s2 + 1.0 / 15;
  p = p * s2 + 1.0 / 13;
  p = p * s2 + 1.0 / 11;
  p = p * s2 + 1.0 / 9;
  p = p * s2 + 1.0 / 7;
  p = p * s2 + 1.0 / 5;
  p = p * s2 + 1.0 / 3;
  const double log_m = 2.0 * s + 2.0 * s * s2 * p;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  return e * kLn2Hi + (log_m + e * kLn2Lo);
}

/// sin and cos for |a| <= pi/4 (Taylor to order 17/16).
inline void sincos_reduced(double a, double& s, double& c) noexcept {
  const double a2 = a * a;
  double ps = -1.0 / 355687428096000.0;
  ps = ps * a2 + 1.0 / 1307674368000.0;
  ps = ps * a2 - 1.0 / 6227020800.0;
  ps = ps * a2 + 1.0 / 39916800.0;
  ps = ps * a2 - 1.0 / 362880.0;
  ps = ps * a2 + 1.0 / 5040.0;
  ps = ps * a2 - 1.0 / 120.0;
  ps = ps * a2 + 1.0 / 6.0;
  s = a - a * a2 * ps;
  double pc = 1.0 / 20922789888000.0;
  pc = pc * a2 - 1.0 / 87178291200.0;
  pc = pc * a2 + 1.0 / 479001600.0;
  pc = pc * a2 - 1.0 / 3628800.0;
  pc = pc * a2 + 1.0 / 40320.0;
  pc = pc * a2 - 1.0 / 720.0;
  pc = pc * a2 + 1.0 / 24.0;
  pc = pc * a2 - 0.5;
  c = 1.0 + a2 * pc;
}

namespace detail {

// round-to-nearest for |v| < 2^51 without a libm call
inline double round_nearest(double v) noexcept {
  constexpr double kMagic = 6755399441055744.0;  // 1.5 * 2^52
  return (v + kMagic) - kMagic;
}

// arithmetic shifts make the quadrant bits valid for negative q as well
inline void apply_quadrant(double q, double s, double c, double& out_s, double& out_c) noexcept {
  const auto qi = static_cast<std::int64_t>(q);
  const double odd = static_cast<double>(qi & 1);
  const double flip_s = static_cast<double>((qi >> 1) & 1);
  const double flip_c = static_cast<double>(((qi + 1) >> 1) & 1);
  const double s1 = odd * c + (1.0 - odd) * s;
  const double c1 = odd * s + (1.0 - odd) * c;
  out_s = s1 * (1.0 - 2.0 * flip_s);
  out_c = c1 * (1.0 - 2.0 * flip_c);
}

}  // namespace detail

/// sin(2*pi*u) and cos(2*pi*u) for u in [0, 1).
inline void sincos_turns(double u, double& s, double& c) noexcept {
  const double v = 4.0 * u;
  const double q = detail::round_nearest(v);
  const double a = (v - q) * 1.57079632679489661923;
  double rs, rc;
  sincos_reduced(a, rs, rc);
  detail::apply_quadrant(q, rs, rc, s, c);
}

/// sin(x) and cos(x) with Cody-Waite reduction; accurate for |x| < 1e6.
inline void sincos(double x, double& s, double& c) noexcept {
  constexpr double kTwoOverPi = 0.63661977236758134308;
  constexpr double kPiHalfHi = 1.57079632673412561417e+00;
  constexpr double kPiHalfLo = 6.07710050650619224932e-11;
  const double q = detail::round_nearest(x * kTwoOverPi);
  double a = x - q * kPiHalfHi;
  a = a - q * kPiHalfLo;
  double rs, rc;
  sincos_reduced(a, rs, rc);
  detail::apply_quadrant(q, rs, rc, s, c);
}

}  // namespace noisydiff::simd
