#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <string>
#include <vector>

#include "mno/dataset.hpp"
#include "mno/fft.hpp"
#include "mno/parallel.hpp"
#include "mno/rng.hpp"
#include "mno/tensor.hpp"

namespace mno::sim {

enum class Equation { Burgers, Phi4, Ou };

inline std::string equation_name(Equation e) {
  switch (e) {
    case Equation::Burgers: return "burgers";
    case Equation::Phi4: return "phi4";
    case Equation::Ou: return "ou";
  }
  throw Error("unreachable");
}

inline Equation equation_from_name(const std::string& s) {
  if (s == "burgers") return Equation::Burgers;
  if (s == "phi4") return Equation::Phi4;
  if (s == "ou") return Equation::Ou;
  throw ConfigError("unknown equation: " + s + " (expected burgers|phi4|ou)");
}

// One-dimensional periodic SPDE description. The diffusive part is treated
// with an exact spectral integrating factor, the nonlinearity explicitly,
// and the driving noise is space-time white scaled by sqrt(dt/dx).
struct SpdeSpec {
  Equation equation = Equation::Burgers;
  double nu = 0.01;        // diffusion coefficient (burgers: viscosity; phi4: 1)
  double mass = 1.0;       // phi4 linear term
  double quartic = 1.0;    // phi4 cubic term
  double ou_rate = 1.0;    // ou mean reversion
  double sigma = 0.05;     // noise amplitude
  double length = 1.0;     // domain length
  int64_t grid = 64;
  double horizon = 0.5;
  double dt = 0.0;         // <= 0 selects the largest stable step
  double c_stab = 0.25;
  int u0_modes = 4;        // low-pass band of the initial-condition sampler
  double u0_amp = 0.5;

  // test hooks, never part of the file schema
  bool hook_disable_nonlinearity = false;
  bool hook_disable_drift = false;

  double stability_bound() const {
    double h = length / static_cast<double>(grid);
    return c_stab * h * h / std::max(nu, 1.0);
  }

  double resolved_dt() const {
    if (equation == Equation::Ou) {
      // no spatial operator; step for time accuracy only
      double d = (dt > 0.0) ? dt : horizon / 512.0;
      return horizon / std::ceil(horizon / d - 1e-12);
    }
    double bound = stability_bound();
    double d = (dt > 0.0) ? dt : bound;
    if (d > bound * (1.0 + 1e-12))
      throw NumericError("spde step " + std::to_string(d) + " violates the stability bound " +
                         std::to_string(bound));
    return horizon / std::ceil(horizon / d - 1e-12);
  }

  void validate() const {
    if (grid < 8) throw ConfigError("spde grid must be >= 8");
    if (horizon <= 0.0) throw ConfigError("spde horizon must be positive");
    if (dt > 0.0 && horizon < dt) throw ConfigError("spde horizon smaller than dt");
    if (length <= 0.0) throw ConfigError("spde domain length must be positive");
    if (sigma < 0.0) throw ConfigError("spde noise amplitude must be nonnegative");
    (void)resolved_dt();
  }

  Json to_json() const {
    Json j;
    j["equation"] = equation_name(equation);
    j["nu"] = nu;
    j["mass"] = mass;
    j["quartic"] = quartic;
    j["ou_rate"] = ou_rate;
    j["sigma"] = sigma;
    j["length"] = length;
    j["grid"] = grid;
    j["horizon"] = horizon;
    j["dt"] = dt;
    j["c_stab"] = c_stab;
    j["u0_modes"] = u0_modes;
    j["u0_amp"] = u0_amp;
    return j;
  }
};

// Band-limited random initial condition. The Fourier coefficients depend
// only on (seed, ic), so the same continuum function can be sampled on any
// grid; that is what makes cross-resolution datasets consistent.
inline std::vector<double> sample_u0(const SpdeSpec& spec, uint64_t seed, int64_t ic, int64_t grid) {
  RngStream rng = make_stream(seed, static_cast<uint64_t>(ic), 0x1c0ULL);
  std::vector<double> u(static_cast<size_t>(grid), 0.0);
  const double two_pi = 6.283185307179586476925286766559;
  for (int m = 1; m <= spec.u0_modes; ++m) {
    double s = spec.u0_amp / static_cast<double>(m);
    double a = rng.gauss() * s;
    double b = rng.gauss() * s;
    for (int64_t j = 0; j < grid; ++j) {
      double x = static_cast<double>(j) / static_cast<double>(grid);
      u[static_cast<size_t>(j)] += a * std::cos(two_pi * m * x) + b * std::sin(two_pi * m * x);
    }
  }
  return u;
}

namespace sim_detail {

struct SpectralWork {
  int64_t n = 0;
  double l = 1.0;
  std::vector<double> decay;      // exp(-nu k^2 dt)
  std::vector<double> wavenum;    // 2 pi k / L
  std::vector<bool> keep;         // 2/3-rule dealias mask
};

inline SpectralWork make_work(const SpdeSpec& spec, double dt) {
  SpectralWork w;
  w.n = spec.grid;
  w.l = spec.length;
  int64_t nmodes = spec.grid / 2 + 1;
  w.decay.resize(static_cast<size_t>(nmodes));
  w.wavenum.resize(static_cast<size_t>(nmodes));
  w.keep.resize(static_cast<size_t>(nmodes));
  const double two_pi = 6.283185307179586476925286766559;
  for (int64_t k = 0; k < nmodes; ++k) {
    double kp = two_pi * static_cast<double>(k) / spec.length;
    w.wavenum[static_cast<size_t>(k)] = kp;
    w.decay[static_cast<size_t>(k)] = std::exp(-spec.nu * kp * kp * dt);
    w.keep[static_cast<size_t>(k)] = (k <= spec.grid / 3);
  }
  return w;
}

// One Euler-Maruyama trajectory with spectral integrating factor.
inline void integrate_one(const SpdeSpec& spec, const SpectralWork& w, double dt, int64_t steps,
                          std::vector<double>& u, RngStream& rng, int64_t traj_index) {
  const int64_t n = w.n;
  const double noise_scale = spec.sigma * std::sqrt(dt / (spec.length / static_cast<double>(n)));
  std::vector<double> nl(static_cast<size_t>(n));
  for (int64_t s = 0; s < steps; ++s) {
    if (spec.equation == Equation::Ou) {
      if (!spec.hook_disable_drift)
        for (auto& x : u) x -= spec.ou_rate * x * dt;
    } else if (!spec.hook_disable_drift) {
      ComplexSpectrum uhat = fft_forward(u);
      if (!spec.hook_disable_nonlinearity) {
        if (spec.equation == Equation::Burgers) {
          // nl = -u u_x with u_x from the spectrum
          ComplexSpectrum dx = uhat;
          for (int64_t k = 0; k < dx.n_modes(); ++k)
            dx.modes[static_cast<size_t>(k)] *= cd(0.0, w.wavenum[static_cast<size_t>(k)]);
          std::vector<double> ux = fft_inverse(dx);
          for (int64_t j = 0; j < n; ++j)
            nl[static_cast<size_t>(j)] = -u[static_cast<size_t>(j)] * ux[static_cast<size_t>(j)];
        } else {
          for (int64_t j = 0; j < n; ++j) {
            double x = u[static_cast<size_t>(j)];
            nl[static_cast<size_t>(j)] = spec.mass * x - spec.quartic * x * x * x;
          }
        }
        ComplexSpectrum nlhat = fft_forward(nl);
        for (int64_t k = 0; k < uhat.n_modes(); ++k) {
          cd add = w.keep[static_cast<size_t>(k)] ? nlhat.modes[static_cast<size_t>(k)] : cd(0, 0);
          uhat.modes[static_cast<size_t>(k)] =
              w.decay[static_cast<size_t>(k)] * (uhat.modes[static_cast<size_t>(k)] + dt * add);
        }
      } else {
        for (int64_t k = 0; k < uhat.n_modes(); ++k)
          uhat.modes[static_cast<size_t>(k)] *= w.decay[static_cast<size_t>(k)];
      }
      u = fft_inverse(uhat);
    }
    if (spec.sigma > 0.0) {
      for (auto& x : u) x += noise_scale * rng.gauss();
    }
    double peak = 0.0;
    for (double x : u) peak = std::max(peak, std::abs(x));
    if (peak > 1e6)
      throw NumericError("spde trajectory " + std::to_string(traj_index) + " blew up at step " +
                         std::to_string(s) + " (|u| > 1e6)");
  }
}

}  // namespace sim_detail

// Ensembles of terminal states. Members of one initial condition differ only
// in their noise stream, and every trajectory draws from its own
// counter-derived stream, so output is identical at any thread count.
inline EnsembleDataset simulate_spde_ensemble(const SpdeSpec& spec, int64_t n_ic, int64_t n_ens,
                                              uint64_t seed) {
  spec.validate();
  if (n_ic < 1 || n_ens < 1) throw ConfigError("simulate_spde_ensemble: need n_ic, n_ens >= 1");
  const double dt = spec.resolved_dt();
  const int64_t steps = static_cast<int64_t>(std::llround(spec.horizon / dt));
  const sim_detail::SpectralWork work = sim_detail::make_work(spec, dt);
  const int64_t n = spec.grid;

  EnsembleDataset ds;
  ds.u0 = Tensor(Shape{n_ic, 1, n});
  ds.uT = Tensor(Shape{n_ic, n_ens, 1, n});
  ds.horizon = spec.horizon;
  ds.coord_len = spec.length;

  for (int64_t i = 0; i < n_ic; ++i) {
    std::vector<double> u0 = sample_u0(spec, seed, i, n);
    std::copy(u0.begin(), u0.end(), ds.u0.data.begin() + i * n);
  }

  std::atomic<bool> failed{false};
  std::string fail_msg;
  std::mutex fail_mu;
  parallel_for(n_ic * n_ens, [&](int64_t t) {
    if (failed.load()) return;
    int64_t i = t / n_ens, e = t % n_ens;
    try {
      std::vector<double> u(ds.u0.data.begin() + i * n, ds.u0.data.begin() + (i + 1) * n);
      RngStream rng = make_stream(seed, static_cast<uint64_t>(i), static_cast<uint64_t>(e), 0x7e3ULL);
      sim_detail::integrate_one(spec, work, dt, steps, u, rng, t);
      std::copy(u.begin(), u.end(), ds.uT.data.begin() + (i * n_ens + e) * n);
    } catch (const std::exception& ex) {
      std::lock_guard<std::mutex> lock(fail_mu);
      failed = true;
      fail_msg = ex.what();
    }
  });
  if (failed) throw NumericError(fail_msg);

  ds.meta["kind"] = "spde";
  ds.meta["schema_version"] = 1;
  ds.meta["spec"] = spec.to_json();
  ds.meta["seed"] = seed;
  ds.meta["n_ic"] = n_ic;
  ds.meta["n_ens"] = n_ens;
  ds.meta["dt_used"] = dt;
  ds.meta["steps"] = steps;
  ds.validate();
  return ds;
}

enum class SynthCase { PureDrift, PureNoise, DriftNoise };

inline SynthCase synth_case_from_name(const std::string& s) {
  if (s == "A" || s == "a" || s == "pure_drift") return SynthCase::PureDrift;
  if (s == "B" || s == "b" || s == "pure_noise") return SynthCase::PureNoise;
  if (s == "C" || s == "c" || s == "drift_noise") return SynthCase::DriftNoise;
  throw ConfigError("unknown synthetic case: " + s + " (expected A|B|C)");
}

struct SynthSpec {
  int64_t grid = 32;
  double drift_amp = 0.4;
  double noise_var = 0.25;
  double u0_amp = 0.5;
  int u0_modes = 4;
  double horizon = 0.5;  // nominal time attached to the terminal states
};

// Controlled drift/noise terminal laws: pure smooth drift (all members
// identical), pure additive Gaussian noise of known variance, or both.
inline EnsembleDataset synth_head_separation(SynthCase c, const SynthSpec& spec, int64_t n_ic,
                                             int64_t n_ens, uint64_t seed) {
  if (n_ic < 1 || n_ens < 1) throw ConfigError("synth_head_separation: need n_ic, n_ens >= 1");
  const int64_t n = spec.grid;
  const double two_pi = 6.283185307179586476925286766559;

  std::vector<double> drift(static_cast<size_t>(n), 0.0);
  if (c != SynthCase::PureNoise)
    for (int64_t j = 0; j < n; ++j) {
      double x = static_cast<double>(j) / static_cast<double>(n);
      drift[static_cast<size_t>(j)] =
          spec.drift_amp * (std::sin(two_pi * x) + 0.5 * std::cos(2.0 * two_pi * x));
    }

  SpdeSpec u0spec;
  u0spec.u0_modes = spec.u0_modes;
  u0spec.u0_amp = spec.u0_amp;

  EnsembleDataset ds;
  ds.u0 = Tensor(Shape{n_ic, 1, n});
  ds.uT = Tensor(Shape{n_ic, n_ens, 1, n});
  ds.horizon = spec.horizon;
  ds.coord_len = 1.0;
  const double noise_std = (c == SynthCase::PureDrift) ? 0.0 : std::sqrt(spec.noise_var);
  for (int64_t i = 0; i < n_ic; ++i) {
    std::vector<double> u0 = sample_u0(u0spec, seed, i, n);
    std::copy(u0.begin(), u0.end(), ds.u0.data.begin() + i * n);
    for (int64_t e = 0; e < n_ens; ++e) {
      RngStream rng = make_stream(seed, static_cast<uint64_t>(i), static_cast<uint64_t>(e), 0x5caULL);
      for (int64_t j = 0; j < n; ++j) {
        double v = u0[static_cast<size_t>(j)] + drift[static_cast<size_t>(j)];
        if (noise_std > 0.0) v += noise_std * rng.gauss();
        ds.uT.data[static_cast<size_t>(((i * n_ens + e) * 1 + 0) * n + j)] = v;
      }
    }
  }

  ds.meta["kind"] = "synth";
  ds.meta["schema_version"] = 1;
  ds.meta["case"] = (c == SynthCase::PureDrift ? "A" : (c == SynthCase::PureNoise ? "B" : "C"));
  ds.meta["grid"] = spec.grid;
  ds.meta["drift_amp"] = spec.drift_amp;
  ds.meta["noise_var"] = spec.noise_var;
  ds.meta["u0_amp"] = spec.u0_amp;
  ds.meta["u0_modes"] = spec.u0_modes;
  ds.meta["horizon"] = spec.horizon;
  ds.meta["seed"] = seed;
  ds.meta["n_ic"] = n_ic;
  ds.meta["n_ens"] = n_ens;
  ds.validate();
  return ds;
}

}  // namespace mno::sim
