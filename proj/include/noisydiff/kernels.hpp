#pragma once

// Noise correlation kernels C(t) and the exact dephasing correlation
//   C_phi(dt) = exp(-g(dt)),   g(dt) = int_0^dt (dt - t) C(t) dt
// together with its long-time (motional narrowing) and short-time
// (Gaussian) asymptotes.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <locale>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "noisydiff/error.hpp"

namespace noisydiff {

enum class KernelShape { Triangular, Exponential, WhiteNoise, Tabulated };

inline std::string_view to_string(KernelShape s) {
  switch (s) {
    case KernelShape::Triangular: return "triangular";
    case KernelShape::Exponential: return "exponential";
    case KernelShape::WhiteNoise: return "white";
    case KernelShape::Tabulated: return "tabulated";
  }
  return "unknown";
}

inline KernelShape parse_kernel_shape(std::string_view name) {
  if (name == "triangular" || name == "linear") return KernelShape::Triangular;
  if (name == "exponential") return KernelShape::Exponential;
  if (name == "white" || name == "white-noise" || name == "whitenoise") return KernelShape::WhiteNoise;
  if (name == "tabulated") return KernelShape::Tabulated;
  throw ConfigError("unknown kernel shape '" + std::string(name) +
                    "' (expected triangular, exponential, white or tabulated)");
}

struct TablePoint {
  double time;
  double value;
};

/// Autocorrelation C(t) of the on-site noise. Immutable after construction.
class CorrelationKernel {
 public:
  CorrelationKernel() = default;

  /// C(t) = W^2 (1 - |t|/tau) for |t| <= tau, zero beyond.
  static CorrelationKernel triangular(double W, double tau) {
    check_magnitude(W);
    check_tau(tau);
    return CorrelationKernel(KernelShape::Triangular, W, tau, 0.0, {});
  }

  /// C(t) = W^2 exp(-|t|/tau).
  static CorrelationKernel exponential(double W, double tau) {
    check_magnitude(W);
    check_tau(tau);
    return CorrelationKernel(KernelShape::Exponential, W, tau, 0.0, {});
  }

  /// C(t) = gamma * delta(t).
  static CorrelationKernel white_noise(double gamma) {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
      throw ConfigError("white-noise strength gamma must be finite and >= 0");
    }
    return CorrelationKernel(KernelShape::WhiteNoise, 0.0, 0.0, gamma, {});
  }

  /// Linearly interpolated table on t >= 0, zero beyond the last sample.
  /// tau <= 0 selects the 1/e decay time of the table.
  static CorrelationKernel tabulated(std::vector<TablePoint> table, double tau = 0.0) {
    if (table.size() < 2) throw ConfigError("tabulated kernel needs at least two samples");
    if (table.front().time != 0.0) throw ConfigError("tabulated kernel must start at t = 0");
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& p = table[i];
      if (!std::isfinite(p.time) || !std::isfinite(p.value)) {
        throw ConfigError("tabulated kernel contains a non-finite entry");
      }
      if (p.value < 0.0) throw ConfigError("tabulated kernel values must be non-negative");
      if (i > 0) {
        if (!(p.time > table[i - 1].time)) {
          throw ConfigError("tabulated kernel times must be strictly increasing");
        }
        if (p.value > table[i - 1].value) {
          throw ConfigError("tabulated kernel values must be non-increasing");
        }
      }
    }
    const double W = std::sqrt(table.front().value);
    CorrelationKernel k(KernelShape::Tabulated, W, 0.0, 0.0, std::move(table));
    k.tau_ = tau > 0.0 ? tau : k.table_decay_time();
    k.build_prefix_sums();
    return k;
  }

  KernelShape shape() const noexcept { return shape_; }
  /// W, with C(0) = W^2 (zero for white noise).
  double magnitude() const noexcept { return magnitude_; }
  /// tau (zero for white noise).
  double corr_time() const noexcept { return tau_; }
  /// gamma for white noise; zero otherwise.
  double strength() const noexcept { return gamma_; }
  std::span<const TablePoint> table() const noexcept { return table_; }
  bool has_finite_tau() const noexcept { return shape_ != KernelShape::WhiteNoise; }

  /// True when the kernel vanishes identically (ballistic dynamics).
  bool is_zero() const noexcept {
    return shape_ == KernelShape::WhiteNoise ? gamma_ == 0.0 : magnitude_ == 0.0;
  }

  /// int_0^inf C(t) dt.
  double half_integral() const {
    switch (shape_) {
      case KernelShape::Triangular: return 0.5 * magnitude_ * magnitude_ * tau_;
      case KernelShape::Exponential: return magnitude_ * magnitude_ * tau_;
      case KernelShape::WhiteNoise: return 0.5 * gamma_;
      case KernelShape::Tabulated: return prefix0_.back();
    }
    return 0.0;
  }

  /// g(dt) for a tabulated kernel, integrated exactly over the interpolant.
  double tabulated_exponent(double dt) const {
    // g(dt) = dt * I0(dt) - I1(dt), I0 = int C, I1 = int t C
    const auto& tab = table_;
    if (dt >= tab.back().time) {
      return dt * prefix0_.back() - prefix1_.back();
    }
    const auto it = std::upper_bound(tab.begin(), tab.end(), dt,
                                     [](double v, const TablePoint& p) { return v < p.time; });
    const std::size_t i = static_cast<std::size_t>(it - tab.begin()) - 1;
    const double t0 = tab[i].time, c0 = tab[i].value;
    const double slope = (tab[i + 1].value - c0) / (tab[i + 1].time - t0);
    const double h = dt - t0;
    // C(t0 + s) = c0 + slope * s on [0, h]
    const double i0 = c0 * h + 0.5 * slope * h * h;
    const double i1 = t0 * i0 + c0 * h * h / 2.0 + slope * h * h * h / 3.0;
    return dt * (prefix0_[i] + i0) - (prefix1_[i] + i1);
  }

  double tabulated_value(double t) const {
    const auto& tab = table_;
    if (t >= tab.back().time) return t == tab.back().time ? tab.back().value : 0.0;
    const auto it = std::upper_bound(tab.begin(), tab.end(), t,
                                     [](double v, const TablePoint& p) { return v < p.time; });
    const std::size_t i = static_cast<std::size_t>(it - tab.begin()) - 1;
    const double w = (t - tab[i].time) / (tab[i + 1].time - tab[i].time);
    return tab[i].value + w * (tab[i + 1].value - tab[i].value);
  }

 private:
  CorrelationKernel(KernelShape shape, double W, double tau, double gamma, std::vector<TablePoint> table)
      : shape_(shape), magnitude_(W), tau_(tau), gamma_(gamma), table_(std::move(table)) {}

  static void check_magnitude(double W) {
    if (!(W >= 0.0) || !std::isfinite(W)) throw ConfigError("noise magnitude W must be finite and >= 0");
  }
  static void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("correlation time tau must be finite and > 0");
  }

  // first time the interpolant drops below C(0)/e
  double table_decay_time() const {
    const double target = table_.front().value / std::exp(1.0);
    for (std::size_t i = 1; i < table_.size(); ++i) {
      if (table_[i].value < target) {
        const auto& a = table_[i - 1];
        const auto& b = table_[i];
        return a.time + (a.value - target) / (a.value - b.value) * (b.time - a.time);
      }
    }
    return table_.back().time;
  }

  void build_prefix_sums() {
    prefix0_.assign(table_.size(), 0.0);
    prefix1_.assign(table_.size(), 0.0);
    for (std::size_t i = 0; i + 1 < table_.size(); ++i) {
      const double t0 = table_[i].time, c0 = table_[i].value;
      const double h = table_[i + 1].time - t0;
      const double slope = (table_[i + 1].value - c0) / h;
      const double i0 = c0 * h + 0.5 * slope * h * h;
      const double i1 = t0 * i0 + c0 * h * h / 2.0 + slope * h * h * h / 3.0;
      prefix0_[i + 1] = prefix0_[i] + i0;
      prefix1_[i + 1] = prefix1_[i] + i1;
    }
  }

  KernelShape shape_ = KernelShape::Triangular;
  double magnitude_ = 0.0;
  double tau_ = 1.0;
  double gamma_ = 0.0;
  std::vector<TablePoint> table_;
  std::vector<double> prefix0_;
  std::vector<double> prefix1_;
};

/// Reads a two-column CSV (time, value); '#' lines and a non-numeric header are skipped.
inline std::vector<TablePoint> read_kernel_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open kernel table '" + path + "'");
  std::vector<TablePoint> out;
  std::string line;
  std::size_t line_no = 0;
  bool seen_data_line = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const bool first = !seen_data_line;
    seen_data_line = true;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    fields.imbue(std::locale::classic());
    TablePoint p{};
    if (!(fields >> p.time >> p.value)) {
      if (first) continue;  // header
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected two numeric columns");
    }
    out.push_back(p);
  }
  return out;
}

/// C(|t|). White noise has no pointwise value.
inline double kernel_value(const CorrelationKernel& k, double t) {
  const double a = std::abs(t);
  const double W2 = k.magnitude() * k.magnitude();
  switch (k.shape()) {
    case KernelShape::Triangular: return a <= k.corr_time() ? W2 * (1.0 - a / k.corr_time()) : 0.0;
    case KernelShape::Exponential: return W2 * std::exp(-a / k.corr_time());
    case KernelShape::WhiteNoise: throw PhysicsDomainError("white-noise kernel has no pointwise value");
    case KernelShape::Tabulated: return k.tabulated_value(a);
  }
  return 0.0;
}

/// beta = int_0^inf C / (W^2 tau): 1/2 triangular, 1 exponential.
inline double kernel_beta(const CorrelationKernel& k) {
  switch (k.shape()) {
    case KernelShape::Triangular: return 0.5;
    case KernelShape::Exponential: return 1.0;
    case KernelShape::WhiteNoise: throw PhysicsDomainError("beta is undefined for white noise (tau -> 0)");
    case KernelShape::Tabulated: {
      const double W2 = k.magnitude() * k.magnitude();
      if (W2 == 0.0) throw PhysicsDomainError("beta is undefined for an identically zero kernel");
      return k.half_integral() / (W2 * k.corr_time());
    }
  }
  return 0.0;
}

inline void check_lag(double dt) {
  if (!(dt >= 0.0)) throw PhysicsDomainError("dephasing lag must be >= 0");
}

/// g(dt) = int_0^dt (dt - t) C(t) dt.
inline double dephasing_exponent(const CorrelationKernel& k, double dt) {
  check_lag(dt);
  const double W2 = k.magnitude() * k.magnitude();
  const double tau = k.corr_time();
  switch (k.shape()) {
    case KernelShape::Triangular:
      if (dt <= tau) return W2 * (dt * dt / 2.0 - dt * dt * dt / (6.0 * tau));
      return W2 * (tau * dt / 2.0 - tau * tau / 6.0);
    case KernelShape::Exponential: {
      const double u = dt / tau;
      // u - 1 + e^-u loses all digits for small u; use the series there
      if (u < 1e-3) return W2 * tau * tau * (u * u / 2.0 - u * u * u / 6.0 + u * u * u * u / 24.0);
      return W2 * tau * tau * (u + std::expm1(-u));
    }
    case KernelShape::WhiteNoise: return 0.5 * k.strength() * dt;
    case KernelShape::Tabulated: return k.tabulated_exponent(dt);
  }
  return 0.0;
}

/// C_phi(dt) = exp(-g(dt)).
inline double dephasing_correlation(const CorrelationKernel& k, double dt) {
  return std::exp(-dephasing_exponent(k, dt));
}

enum class DephasingRegime { LongTime, ShortTime };

/// LongTime: exp(-beta W^2 tau dt). ShortTime: exp(-W^2 dt^2 / 2).
inline double dephasing_asymptote(const CorrelationKernel& k, double dt, DephasingRegime regime) {
  check_lag(dt);
  if (regime == DephasingRegime::LongTime) return std::exp(-k.half_integral() * dt);
  if (k.shape() == KernelShape::WhiteNoise) {
    throw PhysicsDomainError("white noise has no short-time (Gaussian) dephasing regime");
  }
  const double W2 = k.magnitude() * k.magnitude();
  return std::exp(-0.5 * W2 * dt * dt);
}

}  // namespace noisydiff
