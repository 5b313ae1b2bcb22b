#pragma once

// Stochastic tight-binding dynamics
//   i dA_j/dt = T (A_{j+1} + A_{j-1}) + xi(j, t) A_j
// on an open chain of odd length, origin at the centre site.
//
// One step of length h is Strang-split: exp(-i xi h/2), a Cayley hopping step
// (1 + i h H/2)^{-1} (1 - i h H/2), exp(-i xi h/2). The hopping step is a
// tridiagonal solve whose LU factors depend only on (N, T h) and are computed
// once. Consecutive half-step phases are merged, which leaves |A_j|^2 at step
// boundaries unchanged.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "noisydiff/error.hpp"
#include "noisydiff/kernels.hpp"
#include "noisydiff/noise.hpp"
#include "noisydiff/simd_math.hpp"

namespace noisydiff {

using complex = std::complex<double>;

inline constexpr double kDefaultBoundaryMassLimit = 1e-6;
inline constexpr double kNormTolerance = 1e-8;

struct SimConfig {
  double tunneling = 1.0;
  CorrelationKernel kernel;
  std::size_t n_sites = 0;
  double dt = 0.0;
  double t_max = 0.0;
  /// Zero selects t_max / 100.
  double snapshot_interval = 0.0;
  double boundary_mass_limit = kDefaultBoundaryMassLimit;
  /// Integrator steps per noise sample; the noise stays fixed across them.
  std::size_t substeps = 1;
  /// Skip the dt <= min(tau/10, 0.1/W, 0.1/T) accuracy bound.
  bool allow_coarse_dt = false;

  std::size_t n_steps() const { return static_cast<std::size_t>(std::llround(t_max / dt)); }

  std::size_t snapshot_every() const {
    const double interval = snapshot_interval > 0.0 ? snapshot_interval : t_max / 100.0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(interval / dt)));
  }

  /// Integration step h = dt / substeps.
  double step() const { return dt / static_cast<double>(substeps); }

  /// Upper bound on dt from the accuracy heuristic.
  double max_dt() const {
    double bound = std::numeric_limits<double>::infinity();
    if (tunneling > 0.0) bound = std::min(bound, 0.1 / tunneling);
    switch (kernel.shape()) {
      case KernelShape::WhiteNoise:
        if (kernel.strength() > 0.0) bound = std::min(bound, 0.1 / kernel.strength());
        break;
      default:
        bound = std::min(bound, kernel.corr_time() / 10.0);
        if (kernel.magnitude() > 0.0) bound = std::min(bound, 0.1 / kernel.magnitude());
        break;
    }
    return bound;
  }

  void validate() const {
    if (!(tunneling >= 0.0) || !std::isfinite(tunneling)) throw ConfigError("tunneling T must be finite and >= 0");
    if (n_sites < 3) throw ConfigError("lattice needs at least 3 sites");
    if (n_sites % 2 == 0) throw ConfigError("lattice size must be odd so that a centre site exists");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be finite and > 0");
    if (!(t_max >= 0.0) || !std::isfinite(t_max)) throw ConfigError("t_max must be finite and >= 0");
    if (!(snapshot_interval >= 0.0)) throw ConfigError("snapshot interval must be >= 0");
    if (!(boundary_mass_limit > 0.0)) throw ConfigError("boundary mass limit must be > 0");
    if (substeps < 1) throw ConfigError("substeps must be >= 1");
    if (!allow_coarse_dt && dt > max_dt() * (1.0 + 1e-12)) {
      throw ConfigError("dt = " + std::to_string(dt) + " exceeds the accuracy bound " + std::to_string(max_dt()) +
                        " (min(tau/10, 0.1/W, 0.1/T)); set allow_coarse_dt to override");
    }
    check_noise_resolution(kernel, dt);
  }
};

/// N = 2 ceil(8 sqrt(2 D t_max)) + 1; the ballistic front 2 T t_max replaces
/// the diffusive width when D is not finite.
inline std::size_t auto_lattice_size(double D_est, double t_max, double tunneling) {
  const double width = std::isfinite(D_est) ? std::sqrt(2.0 * D_est * t_max) : 2.0 * tunneling * t_max;
  const auto half = static_cast<std::size_t>(std::ceil(8.0 * width));
  return 2 * std::max<std::size_t>(half, 1) + 1;
}

struct LatticeState {
  std::vector<complex> amplitudes;
  double time = 0.0;

  std::size_t size() const noexcept { return amplitudes.size(); }
  std::size_t center() const noexcept { return amplitudes.size() / 2; }

  double norm() const {
    double s = 0.0;
    for (const auto& a : amplitudes) s += std::norm(a);
    return s;
  }

  std::vector<double> probabilities() const {
    std::vector<double> p(amplitudes.size());
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::norm(amplitudes[j]);
    return p;
  }

  double boundary_mass() const { return std::norm(amplitudes.front()) + std::norm(amplitudes.back()); }
};

inline LatticeState init_delta(std::size_t n_sites) {
  if (n_sites < 3) throw ConfigError("lattice needs at least 3 sites");
  if (n_sites % 2 == 0) throw ConfigError("lattice size must be odd so that a centre site exists");
  LatticeState s{std::vector<complex>(n_sites, complex{}), 0.0};
  s.amplitudes[n_sites / 2] = 1.0;
  return s;
}

/// LU factors of the Cayley system (1 + i b K) x = r, K the open-chain adjacency.
struct CayleyFactors {
  double b = 0.0;
  std::vector<double> inv_re, inv_im;  // 1 / pivot_j
  std::vector<double> up_re, up_im;    // i b / pivot_j

  CayleyFactors() = default;
  CayleyFactors(std::size_t n, double tunneling, double h) : b(0.5 * h * tunneling) {
    inv_re.resize(n), inv_im.resize(n), up_re.resize(n), up_im.resize(n);
    const complex ib{0.0, b};
    complex prev{};
    for (std::size_t j = 0; j < n; ++j) {
      const complex inv = 1.0 / (1.0 - ib * prev);
      const complex up = ib * inv;
      inv_re[j] = inv.real(), inv_im[j] = inv.imag();
      up_re[j] = up.real(), up_im[j] = up.imag();
      prev = up;
    }
  }
};

/// Reference single step with the full splitting (no phase merging).
inline void step(LatticeState& state, std::span<const double> noise_column, double dt, double tunneling) {
  const std::size_t n = state.size();
  if (noise_column.size() != n) throw ConfigError("noise column length must equal the lattice size");
  auto& a = state.amplitudes;
  for (std::size_t j = 0; j < n; ++j) a[j] *= std::polar(1.0, -0.5 * dt * noise_column[j]);
  const CayleyFactors f(n, tunneling, dt);
  const complex ib{0.0, f.b};
  std::vector<complex> d(n);
  complex prev{};
  for (std::size_t j = 0; j < n; ++j) {
    const complex left = j > 0 ? a[j - 1] : complex{};
    const complex right = j + 1 < n ? a[j + 1] : complex{};
    const complex r = a[j] - ib * (left + right);
    prev = (r - ib * prev) * complex{f.inv_re[j], f.inv_im[j]};
    d[j] = prev;
  }
  complex next{};
  for (std::size_t j = n; j-- > 0;) {
    next = d[j] - complex{f.up_re[j], f.up_im[j]} * next;
    a[j] = next;
  }
  for (std::size_t j = 0; j < n; ++j) {
    a[j] *= std::polar(1.0, -0.5 * dt * noise_column[j]);
    if (!std::isfinite(a[j].real()) || !std::isfinite(a[j].imag())) {
      throw NumericalError("non-finite amplitude at site " + std::to_string(j) + " after step");
    }
  }
  state.time += dt;
}

template <int L>
struct LaneVector {
  typedef double type __attribute__((vector_size(L * sizeof(double))));
};

/// L independent realizations propagated together, one per SIMD lane.
/// Storage is [site][lane] with a zero pad site at each end.
template <int L>
class BatchPropagator {
 public:
  using V = typename LaneVector<L>::type;
  static constexpr int lanes = L;

  BatchPropagator(std::size_t n_sites, double tunneling, double h)
      : n_(n_sites), f_(n_sites, tunneling, h), re_(n_sites + 2), im_(n_sites + 2), dre_(n_sites), dim_(n_sites),
        cos_(n_sites * L), sin_(n_sites * L) {
    clear();
  }

  std::size_t n_sites() const noexcept { return n_; }

  void clear() {
    std::fill(re_.begin(), re_.end(), V{});
    std::fill(im_.begin(), im_.end(), V{});
  }

  void set_delta() {
    clear();
    re_[n_ / 2 + 1] = V{} + 1.0;
  }

  void set_lane(int lane, std::span<const complex> amplitudes) {
    for (std::size_t j = 0; j < n_; ++j) {
      re_[j + 1][lane] = amplitudes[j].real();
      im_[j + 1][lane] = amplitudes[j].imag();
    }
  }

  std::vector<complex> lane_amplitudes(int lane) const {
    std::vector<complex> a(n_);
    for (std::size_t j = 0; j < n_; ++j) a[j] = {re_[j + 1][lane], im_[j + 1][lane]};
    return a;
  }

  /// A_j <- exp(-i w xi_j) A_j; xi is [site][lane].
  void apply_phase(const double* xi, double w) {
    compute_phase(xi, w, xi, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const V c = load(cos_.data() + j * L), s = load(sin_.data() + j * L);
      const V r = re_[j + 1], i = im_[j + 1];
      re_[j + 1] = r * c - i * s;
      im_[j + 1] = r * s + i * c;
    }
  }

  /// Cayley hopping step followed by A_j <- exp(-i (wa xa_j + wb xb_j)) A_j.
  void hop(const double* xa, double wa, const double* xb, double wb) {
    compute_phase(xa, wa, xb, wb);
    forward();
    backward();
  }

  V boundary_mass() const {
    const V a = re_[1] * re_[1] + im_[1] * im_[1];
    const V b = re_[n_] * re_[n_] + im_[n_] * im_[n_];
    return a + b;
  }

  V norm() const {
    V s{};
    for (std::size_t j = 1; j <= n_; ++j) s += re_[j] * re_[j] + im_[j] * im_[j];
    return s;
  }

  bool finite() const {
    for (std::size_t j = 1; j <= n_; ++j) {
      for (int l = 0; l < L; ++l) {
        if (!std::isfinite(re_[j][l]) || !std::isfinite(im_[j][l])) return false;
      }
    }
    return true;
  }

  /// |A_j|^2 into out[j * L + lane].
  void probabilities(double* out) const {
    for (std::size_t j = 0; j < n_; ++j) {
      const V p = re_[j + 1] * re_[j + 1] + im_[j + 1] * im_[j + 1];
      std::memcpy(out + j * L, &p, sizeof(V));
    }
  }

 private:
  static V load(const double* p) {
    V v;
    std::memcpy(&v, p, sizeof(V));
    return v;
  }

  void compute_phase(const double* __restrict xa, double wa, const double* __restrict xb, double wb) {
    double* __restrict c = cos_.data();
    double* __restrict s = sin_.data();
    const std::size_t m = n_ * L;
    for (std::size_t k = 0; k < m; ++k) {
      const double theta = -(wa * xa[k] + wb * xb[k]);
      simd::sincos(theta, s[k], c[k]);
    }
  }

  void forward() {
    const double b = f_.b;
    const double* __restrict ir = f_.inv_re.data();
    const double* __restrict ii = f_.inv_im.data();
    const V* __restrict yr = re_.data();
    const V* __restrict yi = im_.data();
    V* __restrict dr = dre_.data();
    V* __restrict di = dim_.data();
    V pr{}, pi{};
    for (std::size_t j = 0; j < n_; ++j) {
      const V rr = yr[j + 1] + b * (yi[j] + yi[j + 2] + pi);
      const V ri = yi[j + 1] - b * (yr[j] + yr[j + 2] + pr);
      pr = rr * ir[j] - ri * ii[j];
      pi = rr * ii[j] + ri * ir[j];
      dr[j] = pr;
      di[j] = pi;
    }
  }

  void backward() {
    const double* __restrict ur = f_.up_re.data();
    const double* __restrict ui = f_.up_im.data();
    const V* __restrict dr = dre_.data();
    const V* __restrict di = dim_.data();
    const double* __restrict cs = cos_.data();
    const double* __restrict sn = sin_.data();
    V* __restrict yr = re_.data();
    V* __restrict yi = im_.data();
    V xr{}, xi{};
    for (std::size_t j = n_; j-- > 0;) {
      const V vr = dr[j] - (ur[j] * xr - ui[j] * xi);
      const V vi = di[j] - (ur[j] * xi + ui[j] * xr);
      xr = vr;
      xi = vi;
      const V c = load(cs + j * L), s = load(sn + j * L);
      yr[j + 1] = vr * c - vi * s;
      yi[j + 1] = vr * s + vi * c;
    }
  }

  std::size_t n_;
  CayleyFactors f_;
  std::vector<V> re_, im_;
  std::vector<V> dre_, dim_;
  std::vector<double> cos_, sin_;
};

/// Drives a BatchPropagator through cfg.n_steps() noise steps.
///   next_column(double* col) fills the next noise column ([site][lane]);
///   on_snapshot(step, prop) is called at step 0, every snapshot_every() steps
///   and at the final step, for steps before every lane breached.
/// Returns per lane the first step whose boundary mass exceeds the limit, or
/// n_steps + 1 if none did. Propagation stops once every lane has breached.
template <int L, class NextColumn, class OnSnapshot>
std::vector<std::size_t> propagate(BatchPropagator<L>& prop, const SimConfig& cfg, NextColumn&& next_column,
                                   OnSnapshot&& on_snapshot) {
  const std::size_t n_steps = cfg.n_steps();
  const std::size_t every = cfg.snapshot_every();
  const std::size_t substeps = cfg.substeps;
  const double h = cfg.step();
  const std::size_t width = prop.n_sites() * L;
  std::vector<std::size_t> breach(L, n_steps + 1);
  on_snapshot(std::size_t{0}, prop);
  if (n_steps == 0) return breach;

  std::vector<double> cur(width), nxt(width);
  next_column(cur.data());
  prop.apply_phase(cur.data(), 0.5 * h);
  int open = L;
  for (std::size_t k = 0; k < n_steps; ++k) {
    for (std::size_t sub = 0; sub + 1 < substeps; ++sub) prop.hop(cur.data(), 0.5 * h, cur.data(), 0.5 * h);
    if (k + 1 < n_steps) {
      next_column(nxt.data());
      prop.hop(cur.data(), 0.5 * h, nxt.data(), 0.5 * h);
    } else {
      prop.hop(cur.data(), 0.5 * h, cur.data(), 0.0);
    }
    const auto bm = prop.boundary_mass();
    for (int l = 0; l < L; ++l) {
      if (breach[l] > n_steps && !(bm[l] <= cfg.boundary_mass_limit)) {
        breach[l] = k + 1;
        --open;
      }
    }
    const std::size_t done = k + 1;
    if (done % every == 0 || done == n_steps) {
      if (!prop.finite()) throw NumericalError("non-finite amplitudes at t = " + std::to_string(done * cfg.dt));
      on_snapshot(done, prop);
    }
    if (open == 0) break;
    std::swap(cur, nxt);
  }
  return breach;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> profiles;
  std::vector<double> boundary_mass;
  bool truncated = false;
  /// Time of the first boundary-mass breach (NaN when none occurred).
  double breach_time = std::numeric_limits<double>::quiet_NaN();
  LatticeState final_state;
};

namespace detail {

template <class NextColumn>
Trajectory evolve_single(const SimConfig& cfg, const LatticeState& initial, NextColumn&& next_column) {
  if (initial.size() != cfg.n_sites) throw ConfigError("initial state size differs from n_sites");
  BatchPropagator<1> prop(cfg.n_sites, cfg.tunneling, cfg.step());
  prop.set_lane(0, initial.amplitudes);
  Trajectory tr;
  std::vector<double> p(cfg.n_sites);
  const std::size_t n_steps = cfg.n_steps();
  // the watchdog result is only known after the step, so snapshots are kept
  // and trimmed afterwards
  const auto breach = propagate(prop, cfg, next_column, [&](std::size_t k, const BatchPropagator<1>& b) {
    b.probabilities(p.data());
    tr.times.push_back(initial.time + static_cast<double>(k) * cfg.dt);
    tr.profiles.push_back(p);
    tr.boundary_mass.push_back(b.boundary_mass()[0]);
  });
  std::size_t last_step = n_steps;
  if (breach[0] <= n_steps) {
    tr.truncated = true;
    tr.breach_time = initial.time + static_cast<double>(breach[0]) * cfg.dt;
    last_step = breach[0];
    std::size_t keep = 0;
    while (keep < tr.times.size() && tr.times[keep] < tr.breach_time - 0.5 * cfg.dt) ++keep;
    tr.times.resize(keep);
    tr.profiles.resize(keep);
    tr.boundary_mass.resize(keep);
  }
  tr.final_state.amplitudes = prop.lane_amplitudes(0);
  tr.final_state.time = initial.time + static_cast<double>(last_step) * cfg.dt;
  return tr;
}

}  // namespace detail

/// Evolves one realization with a materialized noise path. On a boundary-mass
/// breach the trajectory stops at the last snapshot before it and
/// truncated is set; final_state then holds |A_j|^2 at the breach step.
inline Trajectory evolve(const SimConfig& cfg, const NoisePath& noise, const LatticeState& initial) {
  cfg.validate();
  const std::size_t n_steps = cfg.n_steps();
  if (std::abs(noise.dt - cfg.dt) > 1e-12 * cfg.dt) throw ConfigError("noise dt differs from the integration dt");
  if (noise.n_sites != cfg.n_sites) throw ConfigError("noise path site count differs from n_sites");
  if (n_steps > 0 && noise.n_steps < n_steps) throw ConfigError("noise path is shorter than t_max");
  std::size_t k = 0;
  return detail::evolve_single(cfg, initial, [&](double* col) {
    for (std::size_t j = 0; j < cfg.n_sites; ++j) col[j] = noise.value(j, k);
    ++k;
  });
}

/// Evolves realization r of the ensemble seeded by master_seed from a centred delta.
inline Trajectory evolve(const SimConfig& cfg, std::uint64_t master_seed, std::uint32_t realization) {
  cfg.validate();
  const auto ids = site_streams(realization, cfg.n_sites);
  NoiseBank bank(cfg.kernel, cfg.dt, master_seed, StreamTag::LatticeNoise, ids);
  return detail::evolve_single(cfg, init_delta(cfg.n_sites),
                               [&](double* col) { bank.next(std::span<double>(col, cfg.n_sites)); });
}

struct Moments {
  double mean;
  double sigma_squared;
};

/// Mean offset from the centre site and variance of a normalized profile.
inline Moments profile_moments(std::span<const double> profile) {
  if (profile.empty() || profile.size() % 2 == 0) throw ConfigError("profile length must be odd");
  const auto center = static_cast<double>(profile.size() / 2);
  double total = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t j = 0; j < profile.size(); ++j) {
    const double p = profile[j];
    if (p < 0.0 || !std::isfinite(p)) throw NumericalError("profile has a negative or non-finite entry at site " + std::to_string(j));
    const double x = static_cast<double>(j) - center;
    total += p;
    m1 += x * p;
    m2 += x * x * p;
  }
  if (std::abs(total - 1.0) > kNormTolerance) {
    throw NumericalError("profile is not normalized: sum deviates from 1 by " + std::to_string(total - 1.0));
  }
  return {m1, m2 - m1 * m1};
}

}  // namespace noisydiff
