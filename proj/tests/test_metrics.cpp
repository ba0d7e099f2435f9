#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mno/fbm.hpp"
#include "mno/metrics.hpp"
#include "mno/rng.hpp"

using namespace mno;
using namespace mno::metrics;

TEST_CASE("rmse metrics match a directly coded oracle") {
  RngStream rng = make_stream(1);
  Tensor a = rng.gauss_tensor(Shape{4, 1, 8}, 1.0);
  Tensor b = rng.gauss_tensor(Shape{4, 1, 8}, 1.0);

  REQUIRE(mean_rmse(a, a) == 0.0);

  Tensor shifted = a;
  for (auto& v : shifted.data) v += 0.37;
  REQUIRE(mean_rmse(shifted, a) == Catch::Approx(0.37).epsilon(1e-12));

  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  double oracle = std::sqrt(acc / a.numel());
  REQUIRE(mean_rmse(a, b) == Catch::Approx(oracle).margin(1e-12));

  // variance flavor: predicting zero against a uniform field v gives v
  Tensor zeros(Shape{2, 1, 4});
  Tensor uniform(Shape{2, 1, 4}, 0.8);
  REQUIRE(variance_rmse(zeros, uniform) == Catch::Approx(0.8).epsilon(1e-14));

  Tensor wrong(Shape{3, 1, 8});
  REQUIRE_THROWS_AS(mean_rmse(a, wrong), Error);
}

TEST_CASE("empirical W2 vanishes on identical samples and sees shifts exactly") {
  RngStream rng = make_stream(2);
  Tensor s = rng.gauss_tensor(Shape{50, 1, 4}, 1.0);
  REQUIRE(empirical_w2(s, s) == 0.0);

  Tensor shifted = s;
  for (auto& v : shifted.data) v += 1.3;
  REQUIRE(empirical_w2(shifted, s) == Catch::Approx(1.3).epsilon(1e-12));

  // symmetry
  Tensor t = rng.gauss_tensor(Shape{70, 1, 4}, 1.0);
  REQUIRE(empirical_w2(s, t) == Catch::Approx(empirical_w2(t, s)).margin(1e-14));

  Tensor one(Shape{1, 1, 4});
  REQUIRE_THROWS_AS(empirical_w2(one, s), Error);
}

TEST_CASE("empirical W2 calibrates against the Gaussian closed form") {
  const int64_t S = 10000;
  RngStream rng = make_stream(3);
  Tensor a(Shape{S, 1, 1}), b(Shape{S, 1, 1});
  for (int64_t i = 0; i < S; ++i) {
    a[i] = 0.3 + 1.2 * rng.gauss();
    b[i] = rng.gauss();
  }
  double closed = gaussian_w2_1d(0.3, 1.2, 0.0, 1.0);
  REQUIRE(closed == Catch::Approx(std::sqrt(0.09 + 0.04)).epsilon(1e-12));
  REQUIRE(std::abs(empirical_w2(a, b) - closed) / closed < 0.05);
}

TEST_CASE("same-distribution W2 decays with the sample count") {
  RngStream rng = make_stream(4);
  auto draw = [&](int64_t s) {
    Tensor t(Shape{s, 1, 8});
    for (auto& v : t.data) v = rng.gauss();
    return t;
  };
  double w_small = empirical_w2(draw(1000), draw(1000));
  double w_large = empirical_w2(draw(10000), draw(10000));
  REQUIRE(w_small / w_large >= 2.0);
}

TEST_CASE("gaussian W2 closed form obeys its trivial identities") {
  REQUIRE(gaussian_w2_1d(0.0, 1.0, 0.0, 1.0) == 0.0);
  REQUIRE(gaussian_w2_1d(0.0, 1.0, 3.0, 1.0) == 3.0);
  REQUIRE(gaussian_w2_1d(0.0, 1.0, 0.0, 2.0) == 1.0);
  REQUIRE_THROWS_AS(gaussian_w2_1d(0.0, -1.0, 0.0, 1.0), Error);
}

TEST_CASE("covariance fidelity sees exact factors, zero factors, and rotations") {
  RngStream rng = make_stream(5);
  const int64_t n = 6, r = 2, S = 50000;
  Tensor b = rng.gauss_tensor(Shape{r, 1, n}, 0.7);

  // samples drawn from the factor law
  Tensor samples(Shape{S, 1, n});
  for (int64_t s = 0; s < S; ++s) {
    double xi[r];
    for (int64_t k = 0; k < r; ++k) xi[k] = rng.gauss();
    for (int64_t x = 0; x < n; ++x) {
      double v = 0.0;
      for (int64_t k = 0; k < r; ++k) v += xi[k] * b.at3(k, 0, x);
      samples.at3(s, 0, x) = v;
    }
  }
  REQUIRE(cov_frobenius_rel(b, samples) < 0.05);

  Tensor bz = Tensor::zeros(Shape{r, 1, n});
  REQUIRE(cov_frobenius_rel(bz, samples) == Catch::Approx(1.0).epsilon(1e-12));

  // orthogonal rotation of the factor rows leaves the metric unchanged
  double c = std::cos(0.7), si = std::sin(0.7);
  Tensor br(Shape{r, 1, n});
  for (int64_t x = 0; x < n; ++x) {
    br.at3(0, 0, x) = c * b.at3(0, 0, x) - si * b.at3(1, 0, x);
    br.at3(1, 0, x) = si * b.at3(0, 0, x) + c * b.at3(1, 0, x);
  }
  REQUIRE(cov_frobenius_rel(br, samples) ==
          Catch::Approx(cov_frobenius_rel(b, samples)).margin(1e-10));

  Tensor flat(Shape{3, 1, n});
  REQUIRE_THROWS_AS(cov_frobenius_rel(b, Tensor(Shape{1, 1, n})), Error);
  (void)flat;
}

TEST_CASE("a factor fit by eigendecomposition recovers a rank-2 truth") {
  RngStream rng = make_stream(6);
  const int64_t n = 6, S = 50000;
  Tensor b_true = rng.gauss_tensor(Shape{2, 1, n}, 0.8);
  Tensor samples(Shape{S, 1, n});
  for (int64_t s = 0; s < S; ++s) {
    double x0 = rng.gauss(), x1 = rng.gauss();
    for (int64_t x = 0; x < n; ++x)
      samples.at3(s, 0, x) = x0 * b_true.at3(0, 0, x) + x1 * b_true.at3(1, 0, x);
  }
  // spectral factorization of the true Gram matrix stands in for a fit
  Tensor gram = op::densify_covariance(b_true);
  // power iteration for the two leading eigenpairs
  auto leading = [&](Tensor mat) {
    std::vector<std::pair<double, std::vector<double>>> pairs;
    for (int comp = 0; comp < 2; ++comp) {
      std::vector<double> v(static_cast<size_t>(n), 0.0);
      v[static_cast<size_t>(comp)] = 1.0;
      double lambda = 0.0;
      for (int it = 0; it < 500; ++it) {
        std::vector<double> w(static_cast<size_t>(n), 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < n; ++j) w[static_cast<size_t>(i)] += mat.at2(i, j) * v[static_cast<size_t>(j)];
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-14) break;
        for (auto& x : w) x /= norm;
        lambda = norm;
        v = w;
      }
      pairs.emplace_back(lambda, v);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
          mat.at2(i, j) -= lambda * pairs.back().second[static_cast<size_t>(i)] *
                           pairs.back().second[static_cast<size_t>(j)];
    }
    return pairs;
  };
  auto pairs = leading(gram);
  Tensor b_fit(Shape{2, 1, n});
  for (int comp = 0; comp < 2; ++comp)
    for (int64_t x = 0; x < n; ++x)
      b_fit.at3(comp, 0, x) = std::sqrt(pairs[static_cast<size_t>(comp)].first) *
                              pairs[static_cast<size_t>(comp)].second[static_cast<size_t>(x)];
  REQUIRE(cov_frobenius_rel(b_fit, samples) < 0.05);
}

TEST_CASE("hurst regression recovers Brownian, rough, and ballistic scaling") {
  // Brownian random walks
  RngStream rng = make_stream(7);
  const int64_t P = 1000, T = 64;
  Tensor brown(Shape{P, T});
  for (int64_t p = 0; p < P; ++p) {
    double acc = 0.0;
    for (int64_t t = 1; t < T; ++t) {
      acc += rng.gauss();
      brown.at2(p, t) = acc;
    }
  }
  HurstEstimate hb = hurst_estimate(brown);
  REQUIRE(std::abs(hb.h - 0.5) < 0.05);

  // exact rough paths
  sim::FbmSpec spec;
  spec.hurst = 0.1;
  spec.n_t = 63;
  Tensor rough = sim::davies_harte_fbm(spec, 1000, 8);
  HurstEstimate hr = hurst_estimate(rough);
  REQUIRE(std::abs(hr.h - 0.1) < 0.05);

  // deterministic ramp: ballistic slope, clipped H, flagged
  Tensor ramp(Shape{16, 32});
  for (int64_t p = 0; p < 16; ++p)
    for (int64_t t = 0; t < 32; ++t) ramp.at2(p, t) = 0.3 * static_cast<double>(t) + p;
  HurstEstimate hd = hurst_estimate(ramp);
  REQUIRE(hd.slope > 1.9);
  REQUIRE(hd.h == 1.0);
  REQUIRE(hd.ballistic_flag);

  Tensor flat(Shape{16, 32});
  REQUIRE_THROWS_AS(hurst_estimate(flat), NumericError);
  Tensor short_paths(Shape{16, 4});
  REQUIRE_THROWS_AS(hurst_estimate(short_paths), Error);
  Tensor few_paths(Shape{2, 32});
  REQUIRE_THROWS_AS(hurst_estimate(few_paths), Error);
}

TEST_CASE("residual correlations separate noise from structure") {
  RngStream rng = make_stream(9);
  const size_t n = 10000;
  std::vector<double> incr(n), feat(n);
  for (size_t i = 0; i < n; ++i) {
    incr[i] = rng.gauss();
    feat[i] = rng.gauss();
  }
  CorrelationReport indep = residual_correlation(incr, {{"f", feat}});
  REQUIRE(indep.max_abs_corr < 0.05);

  CorrelationReport perfect = residual_correlation(incr, {{"self", incr}});
  REQUIRE(perfect.max_abs_corr == Catch::Approx(1.0).epsilon(1e-12));

  std::vector<double> anti(n);
  for (size_t i = 0; i < n; ++i) anti[i] = -incr[i];
  CorrelationReport inverted = residual_correlation(incr, {{"anti", anti}});
  REQUIRE(inverted.max_abs_corr == Catch::Approx(1.0).epsilon(1e-12));

  std::vector<double> constant(n, 2.0);
  CorrelationReport skipped = residual_correlation(incr, {{"const", constant}});
  REQUIRE(skipped.skipped.size() == 1);
  REQUIRE(skipped.skipped.front() == "const");

  std::vector<double> tiny(5, 1.0);
  REQUIRE_THROWS_AS(residual_correlation(tiny, {}), Error);
}

TEST_CASE("exceedance probabilities match the Gaussian tail and Monte Carlo") {
  // degenerate: no variance, mean below threshold
  op::MomentPrediction quiet;
  quiet.mean = Tensor(Shape{1, 4}, 0.5);
  quiet.factor = Tensor::zeros(Shape{1, 1, 4});
  ExceedanceResult zero = exceedance_prob(quiet, 1.0);
  REQUIRE(tensor_max_abs(zero.per_point) == 0.0);
  REQUIRE(zero.union_bound == 0.0);

  // mean zero, std equal to the threshold: two-sided tail of one sigma
  op::MomentPrediction unit;
  unit.mean = Tensor(Shape{1, 3});
  unit.factor = Tensor(Shape{1, 1, 3}, 2.0);
  ExceedanceResult tail = exceedance_prob(unit, 2.0);
  for (int64_t i = 0; i < 3; ++i)
    REQUIRE(tail.per_point[i] == Catch::Approx(0.31731050786291415).epsilon(1e-10));

  // Monte Carlo bracket through the sampler
  RngStream rng = make_stream(10);
  op::MomentPrediction pred;
  pred.mean = rng.gauss_tensor(Shape{1, 4}, 0.4);
  pred.factor = rng.gauss_tensor(Shape{2, 1, 4}, 0.8);
  const int64_t S = 100000;
  Tensor samples = op::sample_terminal(pred, S, 3);
  ExceedanceResult ex = exceedance_prob(pred, 1.2);
  for (int64_t x = 0; x < 4; ++x) {
    double count = 0.0;
    for (int64_t s = 0; s < S; ++s)
      if (std::abs(samples.at3(s, 0, x)) >= 1.2) count += 1.0;
    double mc = count / S;
    double p = ex.per_point.at2(0, x);
    double se = std::sqrt(std::max(p * (1 - p), 1e-12) / S);
    REQUIRE(std::abs(mc - p) < 3.0 * se + 1e-9);
  }
  REQUIRE_THROWS_AS(exceedance_prob(pred, 0.0), Error);
}

TEST_CASE("series correlations include the residual level as a feature") {
  RngStream rng = make_stream(11);
  const size_t n = 500;
  std::vector<std::vector<double>> series(n);
  std::vector<double> feat(n);
  for (size_t i = 0; i < n; ++i) {
    double m0 = rng.gauss();
    series[i] = {m0, m0 + rng.gauss()};
    feat[i] = rng.gauss();
  }
  CorrelationReport rep = residual_correlation_series(series, {{"u0_mean", feat}});
  REQUIRE(rep.per_feature.contains("residual_level"));
  REQUIRE(rep.per_feature.contains("u0_mean"));
  REQUIRE(rep.max_abs_corr < 0.15);
}
