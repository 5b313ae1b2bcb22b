#pragma once

// Ensemble Monte Carlo over noise realizations: ensemble-averaged profiles,
// diffusion-coefficient fits, Monte Carlo dephasing checks and the
// scaling-function sweep.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "noisydiff/error.hpp"
#include "noisydiff/kernels.hpp"
#include "noisydiff/lattice.hpp"
#include "noisydiff/noise.hpp"
#include "noisydiff/philox.hpp"
#include "noisydiff/simd_math.hpp"
#include "noisydiff/theory.hpp"

namespace noisydiff {

struct RunOptions {
  /// Zero means std::thread::hardware_concurrency().
  unsigned workers = 0;
};

inline unsigned resolve_workers(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

struct EnsembleStats {
  SimConfig config;
  std::size_t n_realizations = 0;
  std::uint64_t master_seed = 0;
  std::vector<double> times;
  std::vector<std::vector<double>> mean_profile;
  std::vector<double> sigma_squared;
  /// Jackknife standard error of sigma_squared over realizations.
  std::vector<double> sigma_stderr;
  std::vector<double> mean_position;
  std::vector<double> boundary_mass_max;
  /// Per realization and snapshot, sum_j x_j p_j and sum_j x_j^2 p_j ([r][snapshot]).
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  bool truncated = false;
  double breach_time = std::numeric_limits<double>::quiet_NaN();

  std::size_t n_snapshots() const noexcept { return times.size(); }
};

namespace detail {

struct BatchResult {
  std::size_t first = 0;
  int width = 0;
  std::size_t n_snapshots = 0;
  std::vector<double> profile_sum;  // [snapshot][site], lanes summed in order
  std::vector<double> m1, m2, bm;   // [lane][snapshot]
  std::vector<std::size_t> breach;  // per lane
};

struct BatchSlot {
  std::size_t first;
  int width;
};

/// Realizations in ascending order, grouped 8 wide with a 4/2/1 remainder.
inline std::vector<BatchSlot> plan_batches(std::size_t n) {
  std::vector<BatchSlot> plan;
  std::size_t r = 0;
  for (int w : {8, 4, 2, 1}) {
    while (n - r >= static_cast<std::size_t>(w)) {
      plan.push_back({r, w});
      r += static_cast<std::size_t>(w);
    }
  }
  return plan;
}

template <int L>
BatchResult run_batch(const SimConfig& cfg, std::uint64_t seed, std::size_t first) {
  const std::size_t n = cfg.n_sites;
  const std::size_t max_snaps = cfg.n_steps() / cfg.snapshot_every() + 2;
  std::vector<StreamId> ids(n * L);
  for (std::size_t j = 0; j < n; ++j) {
    for (int l = 0; l < L; ++l) {
      ids[j * L + l] = {static_cast<std::uint32_t>(first + l), static_cast<std::uint32_t>(j)};
    }
  }
  NoiseBank bank(cfg.kernel, cfg.dt, seed, StreamTag::LatticeNoise, ids);
  BatchPropagator<L> prop(n, cfg.tunneling, cfg.step());
  prop.set_delta();

  BatchResult res;
  res.first = first;
  res.width = L;
  res.profile_sum.reserve(max_snaps * n);
  std::vector<std::vector<double>> m1(L), m2(L), bm(L);
  std::vector<double> p(n * L);
  const auto center = static_cast<double>(n / 2);
  res.breach = propagate(
      prop, cfg, [&](double* col) { bank.next(std::span<double>(col, n * L)); },
      [&](std::size_t, const BatchPropagator<L>& b) {
        b.probabilities(p.data());
        typename BatchPropagator<L>::V s1{}, s2{};
        for (std::size_t j = 0; j < n; ++j) {
          typename BatchPropagator<L>::V pj;
          std::memcpy(&pj, p.data() + j * L, sizeof(pj));
          const double x = static_cast<double>(j) - center;
          s1 += x * pj;
          s2 += (x * x) * pj;
          double acc = 0.0;
          for (int l = 0; l < L; ++l) acc += pj[l];
          res.profile_sum.push_back(acc);
        }
        const auto edge = b.boundary_mass();
        for (int l = 0; l < L; ++l) {
          m1[l].push_back(s1[l]);
          m2[l].push_back(s2[l]);
          bm[l].push_back(edge[l]);
        }
        ++res.n_snapshots;
      });
  for (int l = 0; l < L; ++l) {
    res.m1.insert(res.m1.end(), m1[l].begin(), m1[l].end());
    res.m2.insert(res.m2.end(), m2[l].begin(), m2[l].end());
    res.bm.insert(res.bm.end(), bm[l].begin(), bm[l].end());
  }
  return res;
}

inline BatchResult run_slot(const SimConfig& cfg, std::uint64_t seed, BatchSlot slot) {
  switch (slot.width) {
    case 8: return run_batch<8>(cfg, seed, slot.first);
    case 4: return run_batch<4>(cfg, seed, slot.first);
    case 2: return run_batch<2>(cfg, seed, slot.first);
    default: return run_batch<1>(cfg, seed, slot.first);
  }
}

/// Runs task(i) for i in [0, n) on up to `workers` threads; rethrows the
/// lowest-index failure.
template <class Task>
void parallel_for(std::size_t n, unsigned workers, Task&& task) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Runs realizations 0..n-1 from a centred delta. The result depends only on
/// (config, n_realizations, master_seed), not on the worker count.
inline EnsembleStats run_ensemble(const SimConfig& cfg, std::size_t n_realizations, std::uint64_t master_seed,
                                  const RunOptions& opts = {}) {
  cfg.validate();
  if (n_realizations < 1) throw ConfigError("need at least one realization");
  if (n_realizations > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("too many realizations");
  const auto plan = detail::plan_batches(n_realizations);
  std::vector<detail::BatchResult> results(plan.size());
  detail::parallel_for(plan.size(), resolve_workers(opts.workers),
                       [&](std::size_t i) { results[i] = detail::run_slot(cfg, master_seed, plan[i]); });

  const std::size_t n = cfg.n_sites;
  const std::size_t every = cfg.snapshot_every();
  const std::size_t n_steps = cfg.n_steps();
  // snapshot steps as emitted by propagate()
  std::vector<std::size_t> snap_steps{0};
  if (n_steps > 0) {
    for (std::size_t k = every; k < n_steps; k += every) snap_steps.push_back(k);
    snap_steps.push_back(n_steps);
  }

  std::size_t valid = snap_steps.size();
  std::size_t first_breach = n_steps + 1;
  for (const auto& b : results) {
    valid = std::min(valid, b.n_snapshots);
    for (std::size_t s : b.breach) first_breach = std::min(first_breach, s);
  }
  if (first_breach <= n_steps) {
    std::size_t keep = 0;
    while (keep < valid && snap_steps[keep] < first_breach) ++keep;
    valid = keep;
  }

  EnsembleStats st;
  st.config = cfg;
  st.n_realizations = n_realizations;
  st.master_seed = master_seed;
  st.truncated = valid < snap_steps.size();
  if (first_breach <= n_steps) st.breach_time = static_cast<double>(first_breach) * cfg.dt;
  st.times.resize(valid);
  for (std::size_t s = 0; s < valid; ++s) st.times[s] = static_cast<double>(snap_steps[s]) * cfg.dt;
  st.mean_profile.assign(valid, std::vector<double>(n, 0.0));
  st.boundary_mass_max.assign(valid, 0.0);
  st.first_moment.assign(n_realizations * valid, 0.0);
  st.second_moment.assign(n_realizations * valid, 0.0);
  for (const auto& b : results) {
    for (std::size_t s = 0; s < valid; ++s) {
      const double* src = b.profile_sum.data() + s * n;
      auto& dst = st.mean_profile[s];
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
    for (int l = 0; l < b.width; ++l) {
      const std::size_t r = b.first + static_cast<std::size_t>(l);
      for (std::size_t s = 0; s < valid; ++s) {
        const std::size_t at = static_cast<std::size_t>(l) * b.n_snapshots + s;
        st.first_moment[r * valid + s] = b.m1[at];
        st.second_moment[r * valid + s] = b.m2[at];
        st.boundary_mass_max[s] = std::max(st.boundary_mass_max[s], b.bm[at]);
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n_realizations);
  st.sigma_squared.resize(valid);
  st.mean_position.resize(valid);
  st.sigma_stderr.assign(valid, 0.0);
  for (std::size_t s = 0; s < valid; ++s) {
    for (double& v : st.mean_profile[s]) v *= inv_n;
    const auto m = profile_moments(st.mean_profile[s]);
    st.mean_position[s] = m.mean;
    st.sigma_squared[s] = m.sigma_squared;
  }
  if (n_realizations >= 2) {
    const double nr = static_cast<double>(n_realizations);
    for (std::size_t s = 0; s < valid; ++s) {
      double t1 = 0.0, t2 = 0.0;
      for (std::size_t r = 0; r < n_realizations; ++r) {
        t1 += st.first_moment[r * valid + s];
        t2 += st.second_moment[r * valid + s];
      }
      double mean = 0.0;
      std::vector<double> loo(n_realizations);
      for (std::size_t r = 0; r < n_realizations; ++r) {
        const double a = (t1 - st.first_moment[r * valid + s]) / (nr - 1.0);
        const double b = (t2 - st.second_moment[r * valid + s]) / (nr - 1.0);
        loo[r] = b - a * a;
        mean += loo[r];
      }
      mean /= nr;
      double var = 0.0;
      for (double v : loo) var += (v - mean) * (v - mean);
      st.sigma_stderr[s] = std::sqrt(var * (nr - 1.0) / nr);
    }
  }
  return st;
}

enum class FitQuality { Good, ShortWindow, NonLinear };

inline std::string_view to_string(FitQuality q) {
  switch (q) {
    case FitQuality::Good: return "Good";
    case FitQuality::ShortWindow: return "ShortWindow";
    case FitQuality::NonLinear: return "NonLinear";
  }
  return "unknown";
}

inline constexpr double kFitStartDephasingTimes = 5.0;
inline constexpr double kFitMinWidthSites = 2.0;
inline constexpr double kFitMinEndDephasingTimes = 20.0;
inline constexpr double kNonLinearGain = 0.02;
inline constexpr std::size_t kFitMinPoints = 10;

struct DiffusionEstimate {
  double D = 0.0;
  double stderr_D = 0.0;
  double stderr_residual = 0.0;
  double stderr_jackknife = 0.0;
  double t_lo = 0.0;
  double t_hi = 0.0;
  std::size_t n_points = 0;
  double r_squared = 0.0;
  /// R^2 gained by adding a quadratic term.
  double quadratic_gain = 0.0;
  FitQuality quality = FitQuality::Good;
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
  double quadratic_gain = 0.0;
};

/// Least-squares line through (x, y), plus the R^2 a quadratic term would add.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  LineFit f;
  if (n < 2) return f;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[i] - mx, v = y[i] - my;
    sxx += u * u, sxy += u * v, syy += v * v;
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  std::vector<double> resid(n), q(n);
  for (std::size_t i = 0; i < n; ++i) {
    resid[i] = y[i] - (f.intercept + f.slope * x[i]);
    ssr += resid[i] * resid[i];
  }
  f.r_squared = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
  if (n > 2) f.slope_stderr = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
  if (n > 3 && syy > 0.0) {
    // u^2 made orthogonal to {1, u}; the quadratic fit removes the residual's
    // projection onto it
    double mq = 0.0, uq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = x[i] - mx;
      q[i] = u * u;
      mq += q[i];
    }
    mq /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      q[i] -= mq;
      uq += (x[i] - mx) * q[i];
    }
    double rq = 0.0, qq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      q[i] -= uq / sxx * (x[i] - mx);
      rq += resid[i] * q[i];
      qq += q[i] * q[i];
    }
    if (qq > 0.0) f.quadratic_gain = (rq * rq / qq) / syy;
  }
  return f;
}

/// Linear fit of sigma^2(t) over [t_lo, t_hi] with t_lo = max(5 tau_phi, time
/// where sigma reaches 2 sites) and t_hi the last valid snapshot; D = slope/2.
inline DiffusionEstimate fit_diffusion(const EnsembleStats& st) {
  if (st.times.empty()) throw NumericalError("fit window empty: no valid snapshots; increase t_max or the lattice size");
  const double tau_phi = dephasing_time(st.config.kernel);
  DiffusionEstimate est;
  est.t_hi = st.times.back();
  double t_lo = std::isfinite(tau_phi) ? kFitStartDephasingTimes * tau_phi : 0.0;
  const double min_var = kFitMinWidthSites * kFitMinWidthSites;
  std::size_t wide = 0;
  while (wide < st.times.size() && st.sigma_squared[wide] < min_var) ++wide;
  if (wide == st.times.size()) {
    throw NumericalError("fit window empty: sigma never reaches " + std::to_string(kFitMinWidthSites) +
                         " sites; increase t_max");
  }
  t_lo = std::max(t_lo, st.times[wide]);
  est.t_lo = t_lo;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < st.times.size(); ++s) {
    if (st.times[s] >= t_lo * (1.0 - 1e-12) && st.times[s] <= est.t_hi) idx.push_back(s);
  }
  if (idx.size() < 3) {
    throw NumericalError("fit window empty: fewer than 3 snapshots in [" + std::to_string(t_lo) + ", " +
                         std::to_string(est.t_hi) + "]; increase t_max (>= " +
                         std::to_string(kFitMinEndDephasingTimes) + " tau_phi)");
  }
  std::vector<double> x(idx.size()), y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) x[i] = st.times[idx[i]], y[i] = st.sigma_squared[idx[i]];
  const auto line = fit_line(x, y);
  est.n_points = idx.size();
  est.D = 0.5 * line.slope;
  est.r_squared = line.r_squared;
  est.quadratic_gain = line.quadratic_gain;
  est.stderr_residual = 0.5 * line.slope_stderr;

  const std::size_t nr = st.n_realizations;
  const std::size_t ns = st.n_snapshots();
  if (nr >= 2 && st.first_moment.size() == nr * ns) {
    std::vector<double> t1(idx.size(), 0.0), t2(idx.size(), 0.0);
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        t1[i] += st.first_moment[r * ns + idx[i]];
        t2[i] += st.second_moment[r * ns + idx[i]];
      }
    }
    const double n = static_cast<double>(nr);
    std::vector<double> loo(nr), yl(idx.size());
    double mean = 0.0;
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double a = (t1[i] - st.first_moment[r * ns + idx[i]]) / (n - 1.0);
        const double b = (t2[i] - st.second_moment[r * ns + idx[i]]) / (n - 1.0);
        yl[i] = b - a * a;
      }
      loo[r] = 0.5 * fit_line(x, yl).slope;
      mean += loo[r];
    }
    mean /= n;
    double var = 0.0;
    for (double v : loo) var += (v - mean) * (v - mean);
    est.stderr_jackknife = std::sqrt(var * (n - 1.0) / n);
  }
  est.stderr_D = std::max(est.stderr_residual, est.stderr_jackknife);

  if (est.quadratic_gain > kNonLinearGain) {
    est.quality = FitQuality::NonLinear;
  } else if (est.n_points < kFitMinPoints ||
             (std::isfinite(tau_phi) && est.t_hi < kFitMinEndDephasingTimes * tau_phi * (1.0 - 1e-9))) {
    est.quality = FitQuality::ShortWindow;
  } else {
    est.quality = FitQuality::Good;
  }
  return est;
}

struct DephasingPoint {
  double lag;
  std::complex<double> mean;
  double stderr_re;
  double stderr_im;
};

/// Samples are generated in fixed-size chunks so memory stays bounded and the
/// result does not depend on anything but the arguments.
inline constexpr std::size_t kSampleChunk = 4096;

/// Empirical <exp(-i phi(t))>, phi(t) = int_0^t xi, on the grid k dt.
inline std::vector<DephasingPoint> mc_dephasing(const CorrelationKernel& kernel, double dt, double t_max,
                                                std::size_t n_samples, std::uint64_t seed) {
  check_noise_resolution(kernel, dt);
  if (n_samples < 2) throw ConfigError("need at least two dephasing samples");
  if (!(t_max >= 0.0)) throw ConfigError("t_max must be >= 0");
  const auto n_steps = static_cast<std::size_t>(std::llround(t_max / dt));
  std::vector<double> sc(n_steps + 1, 0.0), scc(n_steps + 1, 0.0), ss(n_steps + 1, 0.0), sss(n_steps + 1, 0.0);
  for (std::size_t first = 0; first < n_samples; first += kSampleChunk) {
    const std::size_t m = std::min(kSampleChunk, n_samples - first);
    std::vector<StreamId> ids(m);
    for (std::size_t s = 0; s < m; ++s) ids[s] = {static_cast<std::uint32_t>(first + s), 0};
    NoiseBank bank(kernel, dt, seed, StreamTag::DephasingSample, ids);
    std::vector<double> xi(m), phi(m, 0.0);
    for (std::size_t k = 0; k <= n_steps; ++k) {
      double c_sum = 0.0, c_sq = 0.0, s_sum = 0.0, s_sq = 0.0;
      for (std::size_t s = 0; s < m; ++s) {
        double sn, cs;
        simd::sincos(phi[s], sn, cs);
        c_sum += cs, c_sq += cs * cs;
        s_sum -= sn, s_sq += sn * sn;
      }
      sc[k] += c_sum, scc[k] += c_sq, ss[k] += s_sum, sss[k] += s_sq;
      if (k == n_steps) break;
      bank.next(xi);
      for (std::size_t s = 0; s < m; ++s) phi[s] += xi[s] * dt;
    }
  }
  const double n = static_cast<double>(n_samples);
  std::vector<DephasingPoint> out(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) {
    const double re = sc[k] / n, im = ss[k] / n;
    const double var_re = std::max(0.0, (scc[k] / n - re * re) * n / (n - 1.0));
    const double var_im = std::max(0.0, (sss[k] / n - im * im) * n / (n - 1.0));
    out[k] = {static_cast<double>(k) * dt, {re, im}, std::sqrt(var_re / n), std::sqrt(var_im / n)};
  }
  return out;
}

struct PairFactorEstimate {
  double Q = 0.0;
  double stderr_Q = 0.0;
  /// Analytic tail beyond t_max included in Q.
  double tail = 0.0;
  /// Set when t_max < 20 tau_phi.
  bool truncation_warning = false;
};

/// Q = int_0^inf C_phi^2 from pairs of independent sites: each sample
/// contributes int_0^t_max cos(phi_a - phi_b) (trapezoid rule); the analytic
/// long-time tail C_phi(t_max)^2 / (2 int_0^inf C) is added.
inline PairFactorEstimate mc_pair_factor(const CorrelationKernel& kernel, double dt, double t_max,
                                         std::size_t n_samples, std::uint64_t seed) {
  if (kernel.is_zero()) throw PhysicsDomainError("ballistic regime: Q undefined (no dephasing)");
  check_noise_resolution(kernel, dt);
  if (n_samples < 2) throw ConfigError("need at least two samples");
  const auto n_steps = static_cast<std::size_t>(std::llround(t_max / dt));
  if (n_steps < 1) throw ConfigError("t_max must cover at least one step");
  PairFactorEstimate est;
  est.truncation_warning = t_max < kFitMinEndDephasingTimes * dephasing_time(kernel);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t first = 0; first < n_samples; first += kSampleChunk) {
    const std::size_t m = std::min(kSampleChunk, n_samples - first);
    std::vector<StreamId> ids(2 * m);
    for (std::size_t s = 0; s < m; ++s) {
      ids[2 * s] = {static_cast<std::uint32_t>(first + s), 0};
      ids[2 * s + 1] = {static_cast<std::uint32_t>(first + s), 1};
    }
    NoiseBank bank(kernel, dt, seed, StreamTag::DephasingSample, ids);
    std::vector<double> xi(2 * m), dphi(m, 0.0), q(m, 0.5 * dt);
    for (std::size_t k = 1; k <= n_steps; ++k) {
      bank.next(xi);
      const double w = k == n_steps ? 0.5 * dt : dt;
      for (std::size_t s = 0; s < m; ++s) {
        dphi[s] += (xi[2 * s] - xi[2 * s + 1]) * dt;
        double sn, cs;
        simd::sincos(dphi[s], sn, cs);
        q[s] += w * cs;
      }
    }
    for (double v : q) sum += v, sum_sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0));
  const double edge = dephasing_correlation(kernel, static_cast<double>(n_steps) * dt);
  est.tail = edge * edge / (2.0 * kernel.half_integral());
  est.Q = mean + est.tail;
  est.stderr_Q = std::sqrt(var / n);
  return est;
}

/// dt = tau / ceil(tau / bound) with bound = min(tau/10, 0.1/W, 0.1/T), so
/// that tau is a whole number of steps.
inline double auto_time_step(const CorrelationKernel& kernel, double tunneling) {
  SimConfig probe;
  probe.tunneling = tunneling;
  probe.kernel = kernel;
  const double bound = probe.max_dt();
  if (!std::isfinite(bound)) throw ConfigError("cannot choose dt automatically without noise or tunneling");
  if (kernel.has_finite_tau() && kernel.corr_time() > 0.0) {
    const double tau = kernel.corr_time();
    return tau / std::ceil(tau / bound * (1.0 - 1e-12));
  }
  return bound;
}

/// Long enough for the fit window: max(20 tau_phi, 16 / D).
inline double auto_t_max(const CorrelationKernel& kernel, double tunneling) {
  const double D = predict_diffusion({tunneling, kernel});
  return std::max(kFitMinEndDephasingTimes * dephasing_time(kernel), 16.0 / D);
}

/// Simulation settings chosen from theory for one (kernel, T) point.
inline SimConfig auto_config(const CorrelationKernel& kernel, double tunneling) {
  SimConfig cfg;
  cfg.tunneling = tunneling;
  cfg.kernel = kernel;
  cfg.dt = auto_time_step(kernel, tunneling);
  cfg.t_max = auto_t_max(kernel, tunneling);
  cfg.n_sites = auto_lattice_size(predict_diffusion({tunneling, kernel}), cfg.t_max, tunneling);
  cfg.snapshot_interval = cfg.t_max / 100.0;
  return cfg;
}

struct SweepPoint {
  double tau = 0.0;
  double W = 0.0;
  double x = 0.0;
  double f_numeric = std::numeric_limits<double>::quiet_NaN();
  double f_numeric_err = std::numeric_limits<double>::quiet_NaN();
  double f_theory = std::numeric_limits<double>::quiet_NaN();
  DiffusionEstimate fit;
  SimConfig config;
  bool ok = false;
  bool perturbative_warning = false;
  std::string error;
};

struct SweepOptions {
  unsigned workers = 0;
  std::function<void(const SweepPoint&)> on_point;
};

/// Ensemble fit of D for every (tau, W) pair, reported as f = D / (T^2 tau)
/// next to the scaling function. Failed points are kept with ok = false.
inline std::vector<SweepPoint> scaling_sweep(KernelShape shape, std::span<const double> taus,
                                             std::span<const double> Ws, double tunneling,
                                             std::size_t n_realizations, std::uint64_t master_seed,
                                             const SweepOptions& opts = {}) {
  if (taus.empty() || Ws.empty()) throw ConfigError("sweep grid is empty");
  if (shape != KernelShape::Triangular && shape != KernelShape::Exponential) {
    throw ConfigError("scaling sweep supports triangular and exponential kernels");
  }
  if (!(tunneling > 0.0)) throw ConfigError("tunneling T must be > 0");
  std::vector<SweepPoint> out;
  for (double tau : taus) {
    for (double W : Ws) {
      SweepPoint pt;
      pt.tau = tau;
      pt.W = W;
      pt.x = W * tau;
      try {
        const auto kernel = shape == KernelShape::Triangular ? CorrelationKernel::triangular(W, tau)
                                                             : CorrelationKernel::exponential(W, tau);
        pt.perturbative_warning = TheoryParams{tunneling, kernel}.perturbative_warning();
        pt.f_theory = scaling_function(shape, pt.x);
        pt.config = auto_config(kernel, tunneling);
        const auto stats = run_ensemble(pt.config, n_realizations, master_seed, {opts.workers});
        pt.fit = fit_diffusion(stats);
        const double scale = tunneling * tunneling * tau;
        pt.f_numeric = pt.fit.D / scale;
        pt.f_numeric_err = pt.fit.stderr_D / scale;
        pt.ok = true;
        if (stats.truncated) {
          pt.ok = false;
          pt.error = "boundary mass breached at t = " + std::to_string(stats.breach_time);
        }
      } catch (const std::exception& e) {
        pt.error = e.what();
      }
      if (opts.on_point) opts.on_point(pt);
      out.push_back(std::move(pt));
    }
  }
  return out;
}

struct SlopeFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double stderr_slope = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_points = 0;
};

/// Least-squares slope of log f against log x over points with x in [x_lo, x_hi].
inline SlopeFit loglog_slope(std::span<const double> x, std::span<const double> f, double x_lo, double x_hi) {
  std::vector<double> lx, lf;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= x_lo * (1.0 - 1e-9) && x[i] <= x_hi * (1.0 + 1e-9) && f[i] > 0.0 && std::isfinite(f[i])) {
      lx.push_back(std::log(x[i]));
      lf.push_back(std::log(f[i]));
    }
  }
  SlopeFit s;
  s.n_points = lx.size();
  // a single abscissa has no slope
  if (lx.size() < 2 || *std::max_element(lx.begin(), lx.end()) == *std::min_element(lx.begin(), lx.end())) return s;
  const auto line = fit_line(lx, lf);
  s.slope = line.slope;
  s.stderr_slope = lx.size() > 2 ? line.slope_stderr : 0.0;
  return s;
}

inline SlopeFit loglog_slope(std::span<const SweepPoint> pts, double x_lo, double x_hi, bool numeric = true) {
  std::vector<double> x, f;
  for (const auto& p : pts) {
    if (numeric && !p.ok) continue;
    x.push_back(p.x);
    f.push_back(numeric ? p.f_numeric : p.f_theory);
  }
  return loglog_slope(x, f, x_lo, x_hi);
}

struct CollapsePair {
  std::size_t a, b;
  double difference;
  double tolerance;
  bool agrees;
};

/// Points with equal x (relative 1e-9) compared within the sum of their error bars.
inline std::vector<CollapsePair> collapse_pairs(std::span<const SweepPoint> pts) {
  std::vector<CollapsePair> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      if (!pts[i].ok || !pts[j].ok) continue;
      if (std::abs(pts[i].x - pts[j].x) > 1e-9 * std::max(pts[i].x, pts[j].x)) continue;
      const double diff = std::abs(pts[i].f_numeric - pts[j].f_numeric);
      const double tol = pts[i].f_numeric_err + pts[j].f_numeric_err;
      out.push_back({i, j, diff, tol, diff <= tol});
    }
  }
  return out;
}

}  // namespace noisydiff
