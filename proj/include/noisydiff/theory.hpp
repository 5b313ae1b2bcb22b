#pragma once

// Analytical diffusion coefficient of a particle hopping on a noisy lattice:
//   D = 2 T^2 Q,   Q = int_0^inf C_phi(t)^2 dt = int_0^inf exp(-2 g(t)) dt,
// its short- and long-correlation-time limits, and the scaling form
// D = T^2 tau f(W tau).

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>
#include <numbers>
#include <string_view>

#include "noisydiff/error.hpp"
#include "noisydiff/kernels.hpp"

namespace noisydiff {

/// Relative tolerance of every adaptive quadrature in the theory module.
inline constexpr double kQuadratureTolerance = 1e-10;
/// Q is integrated until C_phi^2 falls below this fraction of its peak (1).
inline constexpr double kTruncationLevel = 1e-14;
/// T/W above which the perturbative result is flagged.
inline constexpr double kPerturbativeRatioLimit = 0.2;

struct TheoryParams {
  double tunneling = 1.0;
  CorrelationKernel kernel;

  void validate() const {
    if (!(tunneling > 0.0) || !std::isfinite(tunneling)) throw ConfigError("tunneling T must be finite and > 0");
  }

  /// T/W; NaN when W is not defined (white noise).
  double perturbative_ratio() const {
    if (kernel.shape() == KernelShape::WhiteNoise) return std::numeric_limits<double>::quiet_NaN();
    if (kernel.magnitude() == 0.0) return std::numeric_limits<double>::infinity();
    return tunneling / kernel.magnitude();
  }

  bool perturbative_warning() const { return perturbative_ratio() > kPerturbativeRatioLimit; }
};

namespace detail {

inline void require_dephasing(const CorrelationKernel& k) {
  if (k.is_zero()) throw PhysicsDomainError("ballistic regime: D undefined (noise-free lattice does not diffuse)");
}

/// Smallest t with g(t) >= level, for a kernel that is not identically zero.
inline double exponent_crossing(const CorrelationKernel& k, double level) {
  if (k.shape() == KernelShape::WhiteNoise) return 2.0 * level / k.strength();
  // g grows at least as fast as its long-time asymptote minus a constant,
  // and as W^2 t^2 / 2 before tau: start from the smaller of the two guesses.
  const double W = k.magnitude();
  double hi = std::min(level / k.half_integral(), std::sqrt(2.0 * level) / W);
  if (!(hi > 0.0) || !std::isfinite(hi)) hi = 1.0;
  double lo = 0.0;
  while (dephasing_exponent(k, hi) < level) {
    lo = hi;
    hi *= 2.0;
  }
  const auto in_bracket = [&](double t) { return dephasing_exponent(k, t) - level; };
  boost::math::tools::eps_tolerance<double> tol(48);
  const auto [a, b] = boost::math::tools::bisect(in_bracket, lo, hi, tol);
  return 0.5 * (a + b);
}

template <class F>
double integrate(F f, double a, double b) {
  if (!(b > a)) return 0.0;
  double error = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 25, kQuadratureTolerance, &error);
}

}  // namespace detail

/// Dephasing time tau_phi defined by C_phi(tau_phi) = 1/e; infinite without noise.
inline double dephasing_time(const CorrelationKernel& k) {
  if (k.is_zero()) return std::numeric_limits<double>::infinity();
  return detail::exponent_crossing(k, 1.0);
}

/// Q = int_0^inf exp(-2 g(t)) dt.
inline double pair_factor(const CorrelationKernel& k) {
  detail::require_dephasing(k);
  if (k.shape() == KernelShape::WhiteNoise) return 1.0 / k.strength();
  const double level = 0.5 * std::log(1.0 / kTruncationLevel);
  const double t_end = detail::exponent_crossing(k, level);
  const auto integrand = [&](double t) { return std::exp(-2.0 * dephasing_exponent(k, t)); };
  // break at tau (kink of the triangular kernel) and at tau_phi, where the
  // integrand changes character
  std::vector<double> breaks{0.0};
  for (double b : {k.corr_time(), dephasing_time(k)}) {
    if (b > 0.0 && b < t_end) breaks.push_back(b);
  }
  breaks.push_back(t_end);
  std::sort(breaks.begin(), breaks.end());
  double q = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) q += detail::integrate(integrand, breaks[i], breaks[i + 1]);
  return q;
}

/// D = 2 T^2 int_0^inf C_phi^2.
inline double predict_diffusion(const TheoryParams& p) {
  p.validate();
  return 2.0 * p.tunneling * p.tunneling * pair_factor(p.kernel);
}

/// Motional-narrowing limit T^2 / (beta W^2 tau) = 2 T^2 / int C; 2 T^2 / gamma for white noise.
inline double diffusion_short_corr_limit(const TheoryParams& p) {
  p.validate();
  detail::require_dephasing(p.kernel);
  return p.tunneling * p.tunneling / p.kernel.half_integral();
}

/// Long-correlation-time limit sqrt(2 pi) T^2 / W, as published.
inline double diffusion_long_corr_limit(double W, double T) {
  if (!(W > 0.0)) throw PhysicsDomainError("ballistic regime: D undefined for W = 0");
  return std::sqrt(2.0 * std::numbers::pi) * T * T / W;
}

/// f(x) with D = T^2 tau f(W tau).
inline double scaling_function(KernelShape shape, double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw PhysicsDomainError("scaling variable x = W tau must be > 0");
  CorrelationKernel k;
  switch (shape) {
    case KernelShape::Triangular: k = CorrelationKernel::triangular(x, 1.0); break;
    case KernelShape::Exponential: k = CorrelationKernel::exponential(x, 1.0); break;
    default: throw PhysicsDomainError("scaling function is defined for triangular and exponential kernels only");
  }
  return predict_diffusion({1.0, k});
}

enum class Regime { ShortCorrelation, Crossover, LongCorrelation };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::ShortCorrelation: return "short-correlation";
    case Regime::Crossover: return "crossover";
    case Regime::LongCorrelation: return "long-correlation";
  }
  return "unknown";
}

inline constexpr double kShortRegimeBound = 0.1;
inline constexpr double kLongRegimeBound = 10.0;

/// Threshold rule on x = W tau: < 0.1 short, > 10 long, crossover between.
inline Regime classify_regime(const CorrelationKernel& k) {
  if (k.shape() == KernelShape::WhiteNoise) return Regime::ShortCorrelation;
  const double x = k.magnitude() * k.corr_time();
  if (x < kShortRegimeBound) return Regime::ShortCorrelation;
  if (x > kLongRegimeBound) return Regime::LongCorrelation;
  return Regime::Crossover;
}

/// Everything the `theory` command reports for one parameter set.
struct TheoryRecord {
  double D;
  double D_short_limit;
  double D_long_limit;
  double beta;
  double x;
  Regime regime;
  double tau_phi;
  double perturbative_ratio;
};

inline TheoryRecord theory_record(const TheoryParams& p) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  const auto& k = p.kernel;
  const bool white = k.shape() == KernelShape::WhiteNoise;
  TheoryRecord r{};
  r.D = predict_diffusion(p);
  r.D_short_limit = diffusion_short_corr_limit(p);
  r.D_long_limit = white ? nan : diffusion_long_corr_limit(k.magnitude(), p.tunneling);
  r.beta = white ? nan : kernel_beta(k);
  r.x = white ? 0.0 : k.magnitude() * k.corr_time();
  r.regime = classify_regime(k);
  r.tau_phi = dephasing_time(k);
  r.perturbative_ratio = p.perturbative_ratio();
  return r;
}

}  // namespace noisydiff
