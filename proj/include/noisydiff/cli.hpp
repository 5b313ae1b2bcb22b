#pragma once

// Command-line front end: theory | dephasing | simulate | collapse.
// Settings come from an optional flat JSON file (--config) overridden by flags.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "noisydiff/csv.hpp"
#include "noisydiff/ensemble.hpp"
#include "noisydiff/error.hpp"
#include "noisydiff/kernels.hpp"
#include "noisydiff/lattice.hpp"
#include "noisydiff/noise.hpp"
#include "noisydiff/theory.hpp"

namespace noisydiff::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr double kSmallFlankLo = 0.02, kSmallFlankHi = 0.1;
inline constexpr double kLargeFlankLo = 5.0, kLargeFlankHi = 20.0;

struct Settings {
  std::optional<std::string> shape, table, out;
  std::optional<double> W, tau, gamma, T, dt, tmax, snapshot, boundary_limit;
  std::optional<std::int64_t> sites, realizations, samples, substeps, workers, dump_noise_site, dump_trajectory;
  std::optional<std::uint64_t> seed;
  std::optional<bool> allow_coarse_dt;
  std::optional<std::vector<double>> taus, Ws, profile_times;

  /// Fields set in `over` replace those here.
  void merge(const Settings& over) {
    auto take = [](auto& dst, const auto& src) {
      if (src) dst = src;
    };
    take(shape, over.shape), take(table, over.table), take(out, over.out);
    take(W, over.W), take(tau, over.tau), take(gamma, over.gamma), take(T, over.T), take(dt, over.dt);
    take(tmax, over.tmax), take(snapshot, over.snapshot), take(boundary_limit, over.boundary_limit);
    take(sites, over.sites), take(realizations, over.realizations), take(samples, over.samples);
    take(substeps, over.substeps), take(workers, over.workers), take(dump_noise_site, over.dump_noise_site);
    take(dump_trajectory, over.dump_trajectory), take(seed, over.seed), take(allow_coarse_dt, over.allow_coarse_dt);
    take(taus, over.taus), take(Ws, over.Ws), take(profile_times, over.profile_times);
  }
};

namespace detail {

inline double json_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

inline std::int64_t json_integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::vector<double> json_numbers(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) out.push_back(json_number(e, key));
  return out;
}

}  // namespace detail

/// Flat JSON object; any key not listed here is rejected.
inline Settings parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  using detail::json_integer;
  using detail::json_number;
  using detail::json_numbers;
  Settings s;
  const std::map<std::string, std::function<void(const json&, const std::string&)>> handlers{
      {"shape", [&](const json& v, const std::string& k) {
         if (!v.is_string()) throw ConfigError("config key '" + k + "' must be a string");
         s.shape = v.get<std::string>();
       }},
      {"table", [&](const json& v, const std::string& k) {
         if (!v.is_string()) throw ConfigError("config key '" + k + "' must be a string");
         s.table = v.get<std::string>();
       }},
      {"out", [&](const json& v, const std::string& k) {
         if (!v.is_string()) throw ConfigError("config key '" + k + "' must be a string");
         s.out = v.get<std::string>();
       }},
      {"W", [&](const json& v, const std::string& k) { s.W = json_number(v, k); }},
      {"tau", [&](const json& v, const std::string& k) { s.tau = json_number(v, k); }},
      {"gamma", [&](const json& v, const std::string& k) { s.gamma = json_number(v, k); }},
      {"T", [&](const json& v, const std::string& k) { s.T = json_number(v, k); }},
      {"dt", [&](const json& v, const std::string& k) { s.dt = json_number(v, k); }},
      {"tmax", [&](const json& v, const std::string& k) { s.tmax = json_number(v, k); }},
      {"snapshot", [&](const json& v, const std::string& k) { s.snapshot = json_number(v, k); }},
      {"boundary_limit", [&](const json& v, const std::string& k) { s.boundary_limit = json_number(v, k); }},
      {"sites", [&](const json& v, const std::string& k) { s.sites = json_integer(v, k); }},
      {"realizations", [&](const json& v, const std::string& k) { s.realizations = json_integer(v, k); }},
      {"samples", [&](const json& v, const std::string& k) { s.samples = json_integer(v, k); }},
      {"substeps", [&](const json& v, const std::string& k) { s.substeps = json_integer(v, k); }},
      {"workers", [&](const json& v, const std::string& k) { s.workers = json_integer(v, k); }},
      {"dump_noise_site", [&](const json& v, const std::string& k) { s.dump_noise_site = json_integer(v, k); }},
      {"dump_trajectory", [&](const json& v, const std::string& k) { s.dump_trajectory = json_integer(v, k); }},
      {"seed", [&](const json& v, const std::string& k) {
         if (!v.is_number_unsigned()) throw ConfigError("config key '" + k + "' must be a non-negative integer");
         s.seed = v.get<std::uint64_t>();
       }},
      {"allow_coarse_dt", [&](const json& v, const std::string& k) {
         if (!v.is_boolean()) throw ConfigError("config key '" + k + "' must be true or false");
         s.allow_coarse_dt = v.get<bool>();
       }},
      {"taus", [&](const json& v, const std::string& k) { s.taus = json_numbers(v, k); }},
      {"Ws", [&](const json& v, const std::string& k) { s.Ws = json_numbers(v, k); }},
      {"profile_times", [&](const json& v, const std::string& k) { s.profile_times = json_numbers(v, k); }},
  };
  for (const auto& [key, value] : doc.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value, key);
  }
  return s;
}

inline Settings load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

/// Range checks on everything that was supplied; runs before any computation.
inline void check_ranges(const Settings& s) {
  auto positive = [](const std::optional<double>& v, const char* name) {
    if (v && !(*v > 0.0 && std::isfinite(*v))) throw ConfigError(std::string(name) + " must be finite and > 0");
  };
  auto non_negative = [](const std::optional<double>& v, const char* name) {
    if (v && !(*v >= 0.0 && std::isfinite(*v))) throw ConfigError(std::string(name) + " must be finite and >= 0");
  };
  auto at_least = [](const std::optional<std::int64_t>& v, std::int64_t lo, const char* name) {
    if (v && *v < lo) throw ConfigError(std::string(name) + " must be >= " + std::to_string(lo));
  };
  auto all_positive = [](const std::optional<std::vector<double>>& v, const char* name) {
    if (!v) return;
    for (double x : *v) {
      if (!(x > 0.0 && std::isfinite(x))) throw ConfigError(std::string(name) + " entries must be finite and > 0");
    }
  };
  if (s.shape) (void)parse_kernel_shape(*s.shape);
  non_negative(s.W, "W");
  positive(s.tau, "tau");
  non_negative(s.gamma, "gamma");
  positive(s.T, "T");
  positive(s.dt, "dt");
  non_negative(s.tmax, "tmax");
  positive(s.snapshot, "snapshot");
  positive(s.boundary_limit, "boundary_limit");
  if (s.boundary_limit && *s.boundary_limit >= 1.0) throw ConfigError("boundary_limit must be < 1");
  at_least(s.sites, 3, "sites");
  if (s.sites && *s.sites % 2 == 0) throw ConfigError("sites must be odd");
  at_least(s.realizations, 1, "realizations");
  at_least(s.samples, 2, "samples");
  at_least(s.substeps, 1, "substeps");
  at_least(s.workers, 0, "workers");
  at_least(s.dump_noise_site, 0, "dump_noise_site");
  at_least(s.dump_trajectory, 0, "dump_trajectory");
  all_positive(s.taus, "taus");
  all_positive(s.Ws, "Ws");
  if (s.profile_times) {
    for (double t : *s.profile_times) {
      if (!(t >= 0.0)) throw ConfigError("profile_times entries must be >= 0");
    }
  }
}

inline CorrelationKernel make_kernel(const Settings& s) {
  const auto shape = parse_kernel_shape(s.shape.value_or("triangular"));
  auto require = [](const std::optional<double>& v, const char* name) {
    if (!v) throw ConfigError(std::string("--") + name + " is required for this kernel shape");
    return *v;
  };
  switch (shape) {
    case KernelShape::Triangular: return CorrelationKernel::triangular(require(s.W, "W"), require(s.tau, "tau"));
    case KernelShape::Exponential: return CorrelationKernel::exponential(require(s.W, "W"), require(s.tau, "tau"));
    case KernelShape::WhiteNoise: return CorrelationKernel::white_noise(require(s.gamma, "gamma"));
    case KernelShape::Tabulated:
      if (!s.table) throw ConfigError("--table is required for a tabulated kernel");
      return CorrelationKernel::tabulated(read_kernel_table(*s.table), s.tau.value_or(0.0));
  }
  throw ConfigError("unsupported kernel shape");
}

/// Resolved settings as one JSON line for the CSV provenance comment. The
/// output directory and worker count are left out: they do not affect results.
inline std::string provenance(const std::string& command, const json& resolved) {
  json p = resolved;
  p["command"] = command;
  return "noisydiff " + p.dump();
}

inline json kernel_json(const CorrelationKernel& k, const Settings& s) {
  json j;
  j["shape"] = std::string(to_string(k.shape()));
  switch (k.shape()) {
    case KernelShape::WhiteNoise: j["gamma"] = k.strength(); break;
    case KernelShape::Tabulated:
      j["table"] = s.table.value_or("");
      j["W"] = k.magnitude();
      j["tau"] = k.corr_time();
      break;
    default:
      j["W"] = k.magnitude();
      j["tau"] = k.corr_time();
      break;
  }
  return j;
}

inline fs::path output_dir(const Settings& s) {
  fs::path dir = s.out.value_or(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline std::string fmt(double v, int digits = 7) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(digits) << v;
  return os.str();
}

inline int cmd_theory(const Settings& s, std::ostream& out) {
  const auto kernel = make_kernel(s);
  const TheoryParams params{s.T.value_or(1.0), kernel};
  json resolved = kernel_json(kernel, s);
  resolved["T"] = params.tunneling;
  const auto rec = theory_record(params);
  const auto dir = output_dir(s);
  CsvWriter csv(dir / "theory.csv", provenance("theory", resolved),
                {"D", "D_short_limit", "D_long_limit", "beta", "x", "regime", "tau_phi", "T_over_W"});
  csv.row(rec.D, rec.D_short_limit, rec.D_long_limit, rec.beta, rec.x, to_string(rec.regime), rec.tau_phi,
          rec.perturbative_ratio);
  out << "D = " << fmt(rec.D) << "  (short-correlation limit " << fmt(rec.D_short_limit)
      << ", long-correlation limit " << fmt(rec.D_long_limit) << ")\n";
  out << "x = W tau = " << fmt(rec.x) << "  regime: " << to_string(rec.regime) << "  beta = " << fmt(rec.beta)
      << "  tau_phi = " << fmt(rec.tau_phi) << "\n";
  if (params.perturbative_warning()) {
    out << "warning: T/W = " << fmt(rec.perturbative_ratio) << " exceeds " << kPerturbativeRatioLimit
        << "; the result assumes T << W\n";
  }
  return 0;
}

inline double default_noise_dt(const CorrelationKernel& k) {
  if (k.shape() == KernelShape::WhiteNoise) return k.strength() > 0.0 ? 0.1 / k.strength() : 0.01;
  return k.corr_time() / 10.0;
}

inline int cmd_dephasing(const Settings& s, std::ostream& out) {
  const auto kernel = make_kernel(s);
  const double dt = s.dt.value_or(default_noise_dt(kernel));
  const double tau_phi = dephasing_time(kernel);
  if (!s.tmax && !std::isfinite(tau_phi)) throw ConfigError("--tmax is required when the kernel vanishes");
  const double t_max = s.tmax.value_or(5.0 * tau_phi);
  const auto samples = static_cast<std::size_t>(s.samples.value_or(10000));
  const std::uint64_t seed = s.seed.value_or(1);
  json resolved = kernel_json(kernel, s);
  resolved["dt"] = dt, resolved["tmax"] = t_max, resolved["samples"] = samples, resolved["seed"] = seed;

  const auto pts = mc_dephasing(kernel, dt, t_max, samples, seed);
  const auto dir = output_dir(s);
  CsvWriter csv(dir / "dephasing.csv", provenance("dephasing", resolved),
                {"lag", "C_phi_analytic", "C_phi_mc_real", "C_phi_mc_imag", "stderr_real", "stderr_imag"});
  double worst = 0.0;
  for (const auto& p : pts) {
    const double exact = dephasing_correlation(kernel, p.lag);
    csv.row(p.lag, exact, p.mean.real(), p.mean.imag(), p.stderr_re, p.stderr_im);
    if (p.stderr_re > 0.0) worst = std::max(worst, std::abs(p.mean.real() - exact) / p.stderr_re);
  }
  out << pts.size() << " lags up to " << fmt(t_max) << ", " << samples << " samples; largest |MC - exact| = "
      << fmt(worst, 3) << " standard errors\n";
  return 0;
}

inline int cmd_simulate(const Settings& s, std::ostream& out) {
  const auto kernel = make_kernel(s);
  const double T = s.T.value_or(1.0);
  const bool ballistic = kernel.is_zero();
  const double D_theory = ballistic ? std::numeric_limits<double>::quiet_NaN() : predict_diffusion({T, kernel});
  SimConfig cfg;
  cfg.tunneling = T;
  cfg.kernel = kernel;
  cfg.dt = s.dt.value_or(0.0);
  if (!s.dt) cfg.dt = auto_time_step(kernel, T);
  if (!s.tmax && ballistic) throw ConfigError("--tmax is required when the kernel vanishes");
  cfg.t_max = s.tmax ? *s.tmax : auto_t_max(kernel, T);
  cfg.n_sites = s.sites ? static_cast<std::size_t>(*s.sites) : auto_lattice_size(D_theory, cfg.t_max, T);
  cfg.snapshot_interval = s.snapshot.value_or(cfg.t_max / 100.0);
  cfg.boundary_mass_limit = s.boundary_limit.value_or(kDefaultBoundaryMassLimit);
  cfg.substeps = static_cast<std::size_t>(s.substeps.value_or(1));
  cfg.allow_coarse_dt = s.allow_coarse_dt.value_or(false);
  cfg.validate();
  const auto n_real = static_cast<std::size_t>(s.realizations.value_or(100));
  const std::uint64_t seed = s.seed.value_or(1);
  if (s.dump_trajectory && static_cast<std::size_t>(*s.dump_trajectory) >= n_real) {
    throw ConfigError("dump_trajectory must name a realization below the realization count");
  }
  if (s.dump_noise_site && static_cast<std::size_t>(*s.dump_noise_site) >= cfg.n_sites) {
    throw ConfigError("dump_noise_site must be below the lattice size");
  }

  json resolved = kernel_json(kernel, s);
  resolved["T"] = T, resolved["dt"] = cfg.dt, resolved["tmax"] = cfg.t_max, resolved["steps"] = cfg.n_steps();
  resolved["sites"] = cfg.n_sites, resolved["snapshot"] = cfg.snapshot_interval;
  resolved["boundary_limit"] = cfg.boundary_mass_limit, resolved["substeps"] = cfg.substeps;
  resolved["allow_coarse_dt"] = cfg.allow_coarse_dt;
  resolved["realizations"] = n_real, resolved["seed"] = seed;
  const std::string prov = provenance("simulate", resolved);
  const auto dir = output_dir(s);

  if (ballistic) out << "ballistic regime: noise-free lattice, D undefined; expect a NonLinear fit\n";
  if (!ballistic && TheoryParams{T, kernel}.perturbative_warning()) {
    out << "warning: T/W exceeds " << kPerturbativeRatioLimit << "; the theory assumes T << W\n";
  }
  out << "lattice " << cfg.n_sites << " sites, dt " << fmt(cfg.dt) << ", " << cfg.n_steps() << " steps, "
      << n_real << " realizations\n";

  const auto stats = run_ensemble(cfg, n_real, seed, {static_cast<unsigned>(s.workers.value_or(0))});
  {
    CsvWriter csv(dir / "sigma.csv", prov, {"time", "sigma_squared", "stderr", "boundary_mass_max", "mean_position"});
    for (std::size_t i = 0; i < stats.n_snapshots(); ++i) {
      csv.row(stats.times[i], stats.sigma_squared[i], stats.sigma_stderr[i], stats.boundary_mass_max[i],
              stats.mean_position[i]);
    }
  }
  if (!stats.times.empty()) {
    std::vector<double> wanted = s.profile_times.value_or(
        std::vector<double>{0.25 * cfg.t_max, 0.5 * cfg.t_max, cfg.t_max});
    std::vector<std::size_t> written;
    for (double t : wanted) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < stats.times.size(); ++i) {
        if (std::abs(stats.times[i] - t) < std::abs(stats.times[best] - t)) best = i;
      }
      if (std::find(written.begin(), written.end(), best) != written.end()) continue;
      written.push_back(best);
      CsvWriter csv(dir / ("profile_t" + format_label(stats.times[best]) + ".csv"), prov,
                    {"site_offset", "probability"});
      const auto& p = stats.mean_profile[best];
      const auto center = static_cast<std::int64_t>(p.size() / 2);
      for (std::size_t j = 0; j < p.size(); ++j) csv.row(static_cast<std::int64_t>(j) - center, p[j]);
    }
  }
  if (s.dump_trajectory) {
    const auto r = static_cast<std::uint32_t>(*s.dump_trajectory);
    const auto tr = evolve(cfg, seed, r);
    CsvWriter csv(dir / ("trajectory_r" + std::to_string(r) + ".csv"), prov,
                  {"time", "sigma_squared", "boundary_mass"});
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      csv.row(tr.times[i], profile_moments(tr.profiles[i]).sigma_squared, tr.boundary_mass[i]);
    }
  }
  if (s.dump_noise_site) {
    const auto j = static_cast<std::uint32_t>(*s.dump_noise_site);
    const StreamId id{0, j};
    NoiseBank bank(kernel, cfg.dt, seed, StreamTag::LatticeNoise, std::span<const StreamId>(&id, 1));
    CsvWriter csv(dir / ("noise_r0_site" + std::to_string(j) + ".csv"), prov, {"time", "xi"});
    double xi = 0.0;
    for (std::size_t k = 0; k < cfg.n_steps(); ++k) {
      bank.next(std::span<double>(&xi, 1));
      csv.row(static_cast<double>(k) * cfg.dt, xi);
    }
  }
  if (stats.truncated) {
    out << "boundary mass exceeded " << cfg.boundary_mass_limit << " at t = " << fmt(stats.breach_time)
        << "; results truncated to t = " << fmt(stats.times.empty() ? 0.0 : stats.times.back())
        << " (increase --sites)\n";
  }
  const auto fit = fit_diffusion(stats);
  {
    CsvWriter csv(dir / "fit.csv", prov,
                  {"D", "stderr", "t_lo", "t_hi", "n_points", "r_squared", "flag", "D_theory", "ratio"});
    csv.row(fit.D, fit.stderr_D, fit.t_lo, fit.t_hi, fit.n_points, fit.r_squared, to_string(fit.quality), D_theory,
            fit.D / D_theory);
  }
  out << "D_numeric = " << fmt(fit.D) << " +- " << fmt(fit.stderr_D, 3) << "  D_theory = " << fmt(D_theory)
      << "  ratio = " << fmt(fit.D / D_theory, 5) << "  fit " << to_string(fit.quality) << " over ["
      << fmt(fit.t_lo) << ", " << fmt(fit.t_hi) << "]\n";
  if (stats.truncated) throw NumericalError("boundary mass breached at t = " + fmt(stats.breach_time));
  return 0;
}

inline int cmd_collapse(const Settings& s, std::ostream& out) {
  const auto shape = parse_kernel_shape(s.shape.value_or("triangular"));
  const auto taus = s.taus.value_or(std::vector<double>{0.01, 0.1, 1.0});
  const auto Ws = s.Ws.value_or(std::vector<double>{2, 5, 10, 20});
  if (taus.empty() || Ws.empty()) throw ConfigError("collapse grid is empty");
  const double T = s.T.value_or(1.0);
  const auto n_real = static_cast<std::size_t>(s.realizations.value_or(50));
  const std::uint64_t seed = s.seed.value_or(1);
  json resolved;
  resolved["shape"] = std::string(to_string(shape)), resolved["taus"] = taus, resolved["Ws"] = Ws;
  resolved["T"] = T, resolved["realizations"] = n_real, resolved["seed"] = seed;
  const std::string prov = provenance("collapse", resolved);
  const auto dir = output_dir(s);

  SweepOptions opts;
  opts.workers = static_cast<unsigned>(s.workers.value_or(0));
  opts.on_point = [&](const SweepPoint& p) {
    out << "tau " << fmt(p.tau) << " W " << fmt(p.W) << " x " << fmt(p.x) << ": ";
    if (p.ok) {
      out << "f = " << fmt(p.f_numeric, 5) << " +- " << fmt(p.f_numeric_err, 2) << "  theory " << fmt(p.f_theory, 5)
          << "  (" << to_string(p.fit.quality) << ")";
    } else {
      out << "failed: " << p.error;
    }
    out << (p.perturbative_warning ? "  [T/W > 0.2]" : "") << std::endl;
  };
  const auto pts = scaling_sweep(shape, taus, Ws, T, n_real, seed, opts);
  {
    CsvWriter csv(dir / "collapse.csv", prov,
                  {"tau", "W", "x", "f_numeric", "f_numeric_err", "f_theory", "D", "D_stderr", "flag", "status"});
    for (const auto& p : pts) {
      csv.row(p.tau, p.W, p.x, p.f_numeric, p.f_numeric_err, p.f_theory, p.fit.D, p.fit.stderr_D,
              p.ok ? to_string(p.fit.quality) : std::string_view("Failed"), p.ok ? std::string_view("ok") : std::string_view(p.error));
    }
  }
  if (pts.size() < 2) {
    out << "warning: a single grid point has no slope\n";
  } else {
    CsvWriter csv(dir / "slopes.csv", prov,
                  {"flank", "x_lo", "x_hi", "n_points", "slope_numeric", "slope_stderr", "slope_theory"});
    const struct {
      const char* name;
      double lo, hi;
    } flanks[] = {{"small_x", kSmallFlankLo, kSmallFlankHi}, {"large_x", kLargeFlankLo, kLargeFlankHi}};
    for (const auto& fl : flanks) {
      const auto num = loglog_slope(pts, fl.lo, fl.hi, true);
      const auto th = loglog_slope(pts, fl.lo, fl.hi, false);
      csv.row(fl.name, fl.lo, fl.hi, num.n_points, num.slope, num.stderr_slope, th.slope);
      out << fl.name << " flank x in [" << fl.lo << ", " << fl.hi << "]: slope " << fmt(num.slope, 4) << " +- "
          << fmt(num.stderr_slope, 2) << " (theory " << fmt(th.slope, 4) << ", " << num.n_points << " points)\n";
    }
  }
  for (const auto& c : collapse_pairs(pts)) {
    out << "x = " << fmt(pts[c.a].x) << ": |f1 - f2| = " << fmt(c.difference, 3) << " vs error bars "
        << fmt(c.tolerance, 3) << (c.agrees ? "  collapse ok" : "  collapse FAILED") << "\n";
  }
  std::size_t failed = 0;
  for (const auto& p : pts) failed += p.ok ? 0 : 1;
  if (failed > 0) throw NumericalError(std::to_string(failed) + " grid point(s) failed; see collapse.csv");
  return 0;
}

namespace detail {

template <class T>
CLI::Option* bind_option(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
  return app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

inline void add_common(CLI::App* app, Settings& s, std::string& config_path) {
  app->add_option("--config", config_path, "JSON settings file (flags override it)");
  bind_option(app, "--shape", s.shape, "kernel shape: triangular, exponential, white, tabulated");
  bind_option(app, "--W", s.W, "noise magnitude W (C(0) = W^2)");
  bind_option(app, "--tau", s.tau, "noise correlation time");
  bind_option(app, "--gamma", s.gamma, "white-noise strength");
  bind_option(app, "--table", s.table, "two-column CSV (time, value) for a tabulated kernel");
  bind_option(app, "--T", s.T, "tunneling amplitude");
  bind_option(app, "--seed", s.seed, "master seed");
  bind_option(app, "--out", s.out, "output directory");
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Quantum diffusion on a lattice with correlated on-site noise"};
  app.require_subcommand(1);
  Settings flags;
  std::string config_path;

  auto* theory = app.add_subcommand("theory", "analytical diffusion coefficient and its limits");
  auto* dephasing = app.add_subcommand("dephasing", "Monte Carlo check of the dephasing correlation");
  auto* simulate = app.add_subcommand("simulate", "ensemble simulation and diffusion fit");
  auto* collapse = app.add_subcommand("collapse", "scaling-function sweep over (tau, W)");
  for (auto* sub : {theory, dephasing, simulate, collapse}) detail::add_common(sub, flags, config_path);
  for (auto* sub : {dephasing, simulate}) {
    detail::bind_option(sub, "--dt", flags.dt, "time step");
    detail::bind_option(sub, "--tmax", flags.tmax, "final time");
  }
  detail::bind_option(dephasing, "--samples", flags.samples, "number of noise samples");
  for (auto* sub : {simulate, collapse}) {
    detail::bind_option(sub, "--realizations", flags.realizations, "noise realizations per point");
    detail::bind_option(sub, "--workers", flags.workers, "worker threads (0: all cores)");
  }
  detail::bind_option(simulate, "--sites", flags.sites, "lattice size (odd)");
  detail::bind_option(simulate, "--snapshot", flags.snapshot, "snapshot interval");
  detail::bind_option(simulate, "--substeps", flags.substeps, "integrator steps per noise sample");
  detail::bind_option(simulate, "--boundary-limit", flags.boundary_limit, "boundary mass limit");
  detail::bind_option(simulate, "--profile-times", flags.profile_times, "times of profile snapshots");
  detail::bind_option(simulate, "--dump-noise-site", flags.dump_noise_site, "write realization 0 noise at this site");
  detail::bind_option(simulate, "--dump-trajectory", flags.dump_trajectory, "write one realization's trajectory");
  simulate->add_flag_function("--allow-coarse-dt", [&](std::int64_t) { flags.allow_coarse_dt = true; },
                              "skip the dt accuracy bound");
  detail::bind_option(collapse, "--taus", flags.taus, "correlation times")->delimiter(',');
  detail::bind_option(collapse, "--Ws", flags.Ws, "noise magnitudes")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::Config);
  }

  try {
    Settings s;
    if (!config_path.empty()) s = load_config_file(config_path);
    s.merge(flags);
    check_ranges(s);
    if (theory->parsed()) return cmd_theory(s, out);
    if (dephasing->parsed()) return cmd_dephasing(s, out);
    if (simulate->parsed()) return cmd_simulate(s, out);
    return cmd_collapse(s, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Config);
  } catch (const PhysicsDomainError& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::PhysicsDomain);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Numerical);
  }
}

}  // namespace noisydiff::cli
