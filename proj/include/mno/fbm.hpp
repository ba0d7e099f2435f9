#pragma once

#include <cmath>
#include <vector>

#include "mno/dataset.hpp"
#include "mno/fft.hpp"
#include "mno/linalg.hpp"
#include "mno/parallel.hpp"
#include "mno/rng.hpp"
#include "mno/tensor.hpp"

namespace mno::sim {

struct FbmSpec {
  double hurst = 0.1;
  double eta = 1.0;     // vol-of-vol in the log-volatility model
  int64_t n_t = 64;
  double horizon = 1.0;

  void validate() const {
    if (!(hurst > 0.0 && hurst <= 1.0)) throw ConfigError("fbm: H must lie in (0,1]");
    if (eta < 0.0) throw ConfigError("fbm: eta must be nonnegative");
    if (n_t < 2) throw ConfigError("fbm: need at least 2 steps");
    if (horizon <= 0.0) throw ConfigError("fbm: horizon must be positive");
  }

  Json to_json() const {
    Json j;
    j["hurst"] = hurst;
    j["eta"] = eta;
    j["n_t"] = n_t;
    j["horizon"] = horizon;
    return j;
  }
};

namespace fbm_detail {

// autocovariance of unit-spacing fractional Gaussian noise
inline double fgn_gamma(double h, int64_t k) {
  double a = static_cast<double>(std::llabs(k));
  double th = 2.0 * h;
  return 0.5 * (std::pow(a + 1.0, th) - 2.0 * std::pow(a, th) + std::pow(std::abs(a - 1.0), th));
}

struct CirculantRoot {
  int64_t n = 0;            // increments per path
  std::vector<double> sq;   // sqrt(eigenvalue / m), m = 2n
  bool usable = false;
};

inline CirculantRoot circulant_root(double h, int64_t n) {
  const int64_t m = 2 * n;
  std::vector<cd> c(static_cast<size_t>(m));
  for (int64_t j = 0; j <= n; ++j) c[static_cast<size_t>(j)] = cd(fgn_gamma(h, j), 0.0);
  for (int64_t j = n + 1; j < m; ++j) c[static_cast<size_t>(j)] = c[static_cast<size_t>(m - j)];
  fft_inplace(c, false);
  CirculantRoot root;
  root.n = n;
  root.sq.resize(static_cast<size_t>(m));
  double max_ev = 0.0, min_ev = 0.0;
  for (auto& z : c) {
    max_ev = std::max(max_ev, z.real());
    min_ev = std::min(min_ev, z.real());
  }
  if (min_ev < -1e-10 * std::max(1.0, max_ev)) {
    root.usable = false;
    return root;
  }
  for (int64_t k = 0; k < m; ++k) {
    double ev = std::max(c[static_cast<size_t>(k)].real(), 0.0);
    root.sq[static_cast<size_t>(k)] = std::sqrt(ev / static_cast<double>(m));
  }
  root.usable = true;
  return root;
}

// exact fBm increment covariance factor for the small-n fallback
inline Tensor increment_cholesky(double h, int64_t n) {
  Tensor cov(Shape{n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) cov.at2(i, j) = fgn_gamma(h, i - j);
  return cholesky_lower(cov, 1e-12);
}

}  // namespace fbm_detail

// Exact fractional Brownian motion via circulant embedding of the increment
// covariance. Paths start at 0; returned shape is [n_paths, n_t + 1].
inline Tensor davies_harte_fbm(const FbmSpec& spec, int64_t n_paths, uint64_t seed) {
  spec.validate();
  if (n_paths < 1) throw ConfigError("davies_harte_fbm: need n_paths >= 1");
  const int64_t n = spec.n_t;
  const int64_t m = 2 * n;
  const double scale = std::pow(spec.horizon / static_cast<double>(n), spec.hurst);

  fbm_detail::CirculantRoot root = fbm_detail::circulant_root(spec.hurst, n);
  Tensor chol;
  if (!root.usable) {
    if (n > 1024)
      throw NumericError("davies_harte_fbm: negative circulant eigenvalue and grid too large for "
                         "the dense fallback");
    chol = fbm_detail::increment_cholesky(spec.hurst, n);
  }

  Tensor paths(Shape{n_paths, n + 1});
  parallel_for(n_paths, [&](int64_t p) {
    RngStream rng = make_stream(seed, static_cast<uint64_t>(p), 0xfb3ULL);
    std::vector<double> fgn(static_cast<size_t>(n));
    if (root.usable) {
      std::vector<cd> v(static_cast<size_t>(m));
      v[0] = cd(root.sq[0] * rng.gauss(), 0.0);
      v[static_cast<size_t>(n)] = cd(root.sq[static_cast<size_t>(n)] * rng.gauss(), 0.0);
      const double inv_sqrt2 = 0.70710678118654752440084436210485;
      for (int64_t k = 1; k < n; ++k) {
        double a = rng.gauss() * inv_sqrt2;
        double b = rng.gauss() * inv_sqrt2;
        v[static_cast<size_t>(k)] = root.sq[static_cast<size_t>(k)] * cd(a, b);
        v[static_cast<size_t>(m - k)] = std::conj(v[static_cast<size_t>(k)]);
      }
      fft_inplace(v, false);
      for (int64_t j = 0; j < n; ++j) fgn[static_cast<size_t>(j)] = v[static_cast<size_t>(j)].real();
    } else {
      std::vector<double> z(static_cast<size_t>(n));
      for (auto& x : z) x = rng.gauss();
      for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j <= i; ++j) s += chol.at2(i, j) * z[static_cast<size_t>(j)];
        fgn[static_cast<size_t>(i)] = s;
      }
    }
    double acc = 0.0;
    paths.at2(p, 0) = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      acc += scale * fgn[static_cast<size_t>(j)];
      paths.at2(p, j + 1) = acc;
    }
  });
  ensure_finite(paths, "fbm paths");
  return paths;
}

// Path-as-field rough volatility data. Each initial condition is a constant
// field log(sigma_0); each member stores the whole log-volatility path on
// the time grid x_j = (j+1) T / n_t, so the field coordinate is time and the
// exact marginal at x is N(log sigma_0, eta^2 x^{2H}).
struct LogVolSpec {
  FbmSpec fbm;
  double logsig0_std = 0.5;

  Json to_json() const {
    Json j = fbm.to_json();
    j["logsig0_std"] = logsig0_std;
    return j;
  }
};

inline EnsembleDataset simulate_logvol_ensemble(const LogVolSpec& spec, int64_t n_ic, int64_t n_ens,
                                                uint64_t seed) {
  spec.fbm.validate();
  if (n_ic < 1 || n_ens < 1) throw ConfigError("simulate_logvol_ensemble: need n_ic, n_ens >= 1");
  const int64_t n = spec.fbm.n_t;

  EnsembleDataset ds;
  ds.u0 = Tensor(Shape{n_ic, 1, n});
  ds.uT = Tensor(Shape{n_ic, n_ens, 1, n});
  ds.horizon = spec.fbm.horizon;
  ds.coord_len = spec.fbm.horizon;

  for (int64_t i = 0; i < n_ic; ++i) {
    RngStream rng = make_stream(seed, static_cast<uint64_t>(i), 0x109ULL);
    double ls0 = rng.gauss() * spec.logsig0_std;
    for (int64_t j = 0; j < n; ++j) ds.u0.at3(i, 0, j) = ls0;
  }

  // one fBm path per (ic, member); seeds derived per trajectory
  parallel_for(n_ic * n_ens, [&](int64_t t) {
    int64_t i = t / n_ens, e = t % n_ens;
    FbmSpec one = spec.fbm;
    Tensor path = davies_harte_fbm(one, 1, mix64(seed ^ mix64(static_cast<uint64_t>(t) + 0x2b1ULL)));
    double ls0 = ds.u0.at3(i, 0, 0);
    for (int64_t j = 0; j < n; ++j)
      ds.uT.data[static_cast<size_t>((i * n_ens + e) * n + j)] = ls0 + spec.fbm.eta * path.at2(0, j + 1);
  });

  ds.meta["kind"] = "fbm_logvol";
  ds.meta["schema_version"] = 1;
  ds.meta["spec"] = spec.to_json();
  ds.meta["seed"] = seed;
  ds.meta["n_ic"] = n_ic;
  ds.meta["n_ens"] = n_ens;
  ds.validate();
  return ds;
}

}  // namespace mno::sim
