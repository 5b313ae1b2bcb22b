#pragma once

// Discrete-time Gaussian on-site noise with a prescribed autocorrelation.
// Values are held constant over each sampling step.
//   triangular:  length-M moving average of iid normals, M = round(tau / dt)
//   exponential: AR(1) with a = exp(-dt / tau), stationary start
//   white:       iid with variance gamma / dt

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "noisydiff/error.hpp"
#include "noisydiff/kernels.hpp"
#include "noisydiff/philox.hpp"

namespace noisydiff {

/// Largest allowed relative mismatch between M*dt and tau for triangular noise.
inline constexpr double kMovingAverageMismatch = 0.05;
/// Finite-tau kernels need dt <= tau / kMinStepsPerTau.
inline constexpr double kMinStepsPerTau = 4.0;

/// Throws ConfigError if dt cannot resolve the kernel.
inline void check_noise_resolution(const CorrelationKernel& k, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time step dt must be finite and > 0");
  switch (k.shape()) {
    case KernelShape::Tabulated:
      throw ConfigError("tabulated kernels are supported for theory only, not for noise sampling");
    case KernelShape::WhiteNoise:
      return;
    case KernelShape::Triangular:
    case KernelShape::Exponential:
      break;
  }
  const double tau = k.corr_time();
  if (dt > tau / kMinStepsPerTau) {
    throw ConfigError("noise resolution: dt = " + std::to_string(dt) + " exceeds tau/4 = " +
                      std::to_string(tau / kMinStepsPerTau));
  }
  if (k.shape() == KernelShape::Triangular) {
    const double M = std::round(tau / dt);
    if (std::abs(M * dt - tau) / tau > kMovingAverageMismatch) {
      throw ConfigError("noise resolution: tau/dt = " + std::to_string(tau / dt) +
                        " is too far from an integer for the moving-average window");
    }
  }
}

/// Streaming noise source for many (realization, site) streams at once. Each
/// call to next() yields the value of every stream for the following step.
/// A stream's values depend only on (seed, tag, realization, site).
class NoiseBank {
 public:
  NoiseBank(const CorrelationKernel& kernel, double dt, std::uint64_t seed, StreamTag tag,
            std::span<const StreamId> ids)
      : shape_(kernel.shape()), n_(ids.size()) {
    check_noise_resolution(kernel, dt);
    zero_ = kernel.is_zero();
    if (zero_) return;
    normals_ = NormalStreams(seed, tag, ids);
    draw_.assign(n_, 0.0);
    state_.assign(n_, 0.0);
    switch (shape_) {
      case KernelShape::Triangular: {
        window_ = static_cast<std::size_t>(std::round(kernel.corr_time() / dt));
        scale_ = kernel.magnitude() / std::sqrt(static_cast<double>(window_));
        ring_.assign(window_ * n_, 0.0);
        break;
      }
      case KernelShape::Exponential:
        decay_ = std::exp(-dt / kernel.corr_time());
        scale_ = kernel.magnitude();
        innovation_ = kernel.magnitude() * std::sqrt(-std::expm1(-2.0 * dt / kernel.corr_time()));
        break;
      default:
        scale_ = std::sqrt(kernel.strength() / dt);
        break;
    }
  }

  std::size_t size() const noexcept { return n_; }
  std::uint64_t steps() const noexcept { return step_; }

  void next(std::span<double> out) {
    double* __restrict dst = out.data();
    const std::size_t n = n_;
    if (zero_) {
      for (std::size_t s = 0; s < n; ++s) dst[s] = 0.0;
      ++step_;
      return;
    }
    // one Philox block serves two draws, and block indices are 32-bit
    if (normals_.draws() >= (std::uint64_t{1} << 33) - 2 * window_ - 2) {
      throw NumericalError("noise stream exhausted (more than 2^33 draws per stream)");
    }
    double* __restrict x = state_.data();
    switch (shape_) {
      case KernelShape::Triangular: advance_moving_average(); break;
      case KernelShape::Exponential: {
        normals_.next(draw_);
        const double* __restrict z = draw_.data();
        if (step_ == 0) {
          for (std::size_t s = 0; s < n; ++s) x[s] = scale_ * z[s];
        } else {
          const double a = decay_, c = innovation_;
          for (std::size_t s = 0; s < n; ++s) x[s] = a * x[s] + c * z[s];
        }
        break;
      }
      default: {
        normals_.next(draw_);
        const double* __restrict z = draw_.data();
        for (std::size_t s = 0; s < n; ++s) x[s] = scale_ * z[s];
        break;
      }
    }
    for (std::size_t s = 0; s < n; ++s) dst[s] = x[s];
    ++step_;
  }

 private:
  static constexpr std::uint64_t kResumInterval = 1024;

  // state_ holds the running window sums; the scaled sum is written into draw_
  void advance_moving_average() {
    const std::size_t n = n_;
    double* __restrict sum = sum_.data();
    if (step_ == 0) {
      sum_.assign(n, 0.0);
      sum = sum_.data();
      for (std::size_t m = 0; m < window_; ++m) {
        normals_.next(std::span<double>(ring_.data() + m * n, n));
        const double* __restrict slot = ring_.data() + m * n;
        for (std::size_t s = 0; s < n; ++s) sum[s] += slot[s];
      }
    } else {
      double* __restrict slot = ring_.data() + head_ * n;
      normals_.next(draw_);
      const double* __restrict z = draw_.data();
      for (std::size_t s = 0; s < n; ++s) {
        sum[s] = (sum[s] - slot[s]) + z[s];
        slot[s] = z[s];
      }
      head_ = head_ + 1 == window_ ? 0 : head_ + 1;
      // the running sum drifts by rounding; rebuild it from the window now and then
      if (step_ % kResumInterval == 0) {
        for (std::size_t s = 0; s < n; ++s) sum[s] = 0.0;
        for (std::size_t m = 0; m < window_; ++m) {
          const double* __restrict w = ring_.data() + m * n;
          for (std::size_t s = 0; s < n; ++s) sum[s] += w[s];
        }
      }
    }
    double* __restrict x = state_.data();
    const double scale = scale_;
    for (std::size_t s = 0; s < n; ++s) x[s] = scale * sum[s];
  }

  KernelShape shape_;
  std::size_t n_;
  bool zero_ = false;
  NormalStreams normals_;
  std::vector<double> draw_;
  std::vector<double> state_;
  std::uint64_t step_ = 0;
  double scale_ = 0.0;
  double decay_ = 0.0;
  double innovation_ = 0.0;
  std::size_t window_ = 0;
  std::size_t head_ = 0;
  std::vector<double> ring_;
  std::vector<double> sum_;
};

/// Materialized noise for one realization: value(site, step) = xi(site, step * dt).
struct NoisePath {
  double dt = 0.0;
  std::size_t n_sites = 0;
  std::size_t n_steps = 0;
  std::vector<double> values;  // [site][step]
  CorrelationKernel kernel;
  std::uint64_t master_seed = 0;
  std::uint32_t realization = 0;

  double value(std::size_t site, std::size_t step) const { return values[site * n_steps + step]; }
  std::span<const double> site_values(std::size_t site) const {
    return {values.data() + site * n_steps, n_steps};
  }
};

inline std::vector<StreamId> site_streams(std::uint32_t realization, std::size_t n_sites) {
  std::vector<StreamId> ids(n_sites);
  for (std::size_t j = 0; j < n_sites; ++j) ids[j] = {realization, static_cast<std::uint32_t>(j)};
  return ids;
}

inline NoisePath sample_noise_paths(const CorrelationKernel& kernel, std::size_t n_sites, double dt,
                                    std::size_t n_steps, std::uint64_t master_seed,
                                    std::uint32_t realization) {
  if (n_sites < 1 || n_steps < 1) throw ConfigError("noise path needs at least one site and one step");
  const auto ids = site_streams(realization, n_sites);
  NoiseBank bank(kernel, dt, master_seed, StreamTag::LatticeNoise, ids);
  NoisePath path{dt, n_sites, n_steps, std::vector<double>(n_sites * n_steps), kernel, master_seed, realization};
  std::vector<double> column(n_sites);
  for (std::size_t k = 0; k < n_steps; ++k) {
    bank.next(column);
    for (std::size_t j = 0; j < n_sites; ++j) path.values[j * n_steps + k] = column[j];
  }
  return path;
}

struct CovariancePoint {
  double lag_time;
  double value;
};

/// Site-averaged autocovariance with 1/n_steps normalization (per-site mean removed).
inline std::vector<CovariancePoint> empirical_autocovariance(const NoisePath& path, std::size_t max_lag) {
  if (max_lag * 10 >= path.n_steps) {
    throw ConfigError("max_lag must be below n_steps / 10 (got " + std::to_string(max_lag) + " for " +
                      std::to_string(path.n_steps) + " steps)");
  }
  const std::size_t n = path.n_steps;
  std::vector<double> acc(max_lag + 1, 0.0);
  std::vector<double> centered(n);
  for (std::size_t j = 0; j < path.n_sites; ++j) {
    const auto x = path.site_values(j);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) centered[k] = x[k] - mean;
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
      double s = 0.0;
      for (std::size_t k = 0; k + lag < n; ++k) s += centered[k] * centered[k + lag];
      acc[lag] += s / static_cast<double>(n);
    }
  }
  std::vector<CovariancePoint> out(max_lag + 1);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    out[lag] = {static_cast<double>(lag) * path.dt, acc[lag] / static_cast<double>(path.n_sites)};
  }
  return out;
}

}  // namespace noisydiff
