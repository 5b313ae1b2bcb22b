#pragma once

// Independent reference computations for the tests. Nothing here calls the
// closed forms or the Gauss-Kronrod path of the library.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  if (n % 2) ++n;
  const double h = (b - a) / static_cast<double>(n);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) s += f(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// g(dt) = int_0^dt (dt - t) C(t) dt by Simpson on [0, dt], split at the kink.
inline double exponent(const std::function<double(double)>& C, double dt, double kink, std::size_t n = 20000) {
  auto f = [&](double t) { return (dt - t) * C(t); };
  if (kink > 0.0 && kink < dt) return simpson(f, 0.0, kink, n) + simpson(f, kink, dt, n);
  return simpson(f, 0.0, dt, n);
}

/// Triangular C(t), written out independently of the library.
inline double triangular(double W, double tau, double t) {
  t = std::abs(t);
  return t < tau ? W * W * (1.0 - t / tau) : 0.0;
}

/// D = 2 T^2 int_0^inf exp(-2 g) with g from nested Simpson quadrature.
inline double diffusion_triangular(double W, double tau, double T, double t_end, std::size_t n = 4000) {
  auto C = [&](double t) { return triangular(W, tau, t); };
  auto integrand = [&](double t) { return std::exp(-2.0 * exponent(C, t, tau, 400)); };
  const double kink = std::min(tau, t_end);
  double q = simpson(integrand, 0.0, kink, n);
  if (t_end > kink) q += simpson(integrand, kink, t_end, n);
  return 2.0 * T * T * q;
}

// Reference values from an independent adaptive quadrature (scipy.integrate.quad,
// tolerance 1e-12) of 2 T^2 int_0^inf exp(-2 g(t)) dt for the triangular kernel.
inline constexpr double kDiffusionW20 = 0.506644540;  // T=1, W=20, tau=0.01
inline constexpr double kDiffusionLongTri = 0.177279;  // T=1, W=10, tau=100

struct ScalingRef {
  double x;
  double f;
};
inline const std::vector<ScalingRef> kTriangularScaling{
    {0.01, 20000.667}, {0.02, 5000.6666}, {0.05, 800.6665}, {0.1, 200.6661}, {0.2, 50.66445}, {0.5, 8.653143},
    {1.0, 2.616555},   {2.0, 1.012254},   {5.0, 0.369601},  {10.0, 0.180780}, {20.0, 0.089480}, {100.0, 0.017758}};

// C_phi(tau_phi) = 1/e for the triangular kernel, same reference quadrature.
struct DephasingTimeRef {
  double tau, W, tau_phi;
};
inline const std::vector<DephasingTimeRef> kTriangularDephasingTime{
    {0.01, 2, 50.0}, {0.01, 5, 8.003}, {0.01, 10, 2.003}, {0.01, 20, 0.5033},
    {0.1, 2, 5.033}, {0.1, 5, 0.833},  {0.1, 10, 0.2333}, {0.1, 20, 0.0832},
    {1.0, 2, 0.832}, {1.0, 5, 0.298},  {1.0, 10, 0.145},  {1.0, 20, 0.0716}};

/// Bartlett variance of the biased lag-l autocovariance estimate of a
/// stationary Gaussian sequence with true autocovariance c, from n samples.
inline double bartlett_variance(const std::function<double(long)>& c, long lag, double n, long max_range) {
  double s = 0.0;
  for (long m = -max_range; m <= max_range; ++m) s += c(m) * c(m) + c(m + lag) * c(m - lag);
  return s / n;
}

}  // namespace oracle
