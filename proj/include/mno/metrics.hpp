#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mno/linalg.hpp"
#include "mno/model.hpp"
#include "mno/serialize.hpp"
#include "mno/tensor.hpp"

namespace mno::metrics {

struct MetricRecord {
  std::string name;
  double value = 0.0;
  int64_t n_samples = 0;
  uint64_t seed = 0;
  Json aux;

  Json to_json() const {
    Json j;
    j["name"] = name;
    j["value"] = value;
    j["n_samples"] = n_samples;
    j["seed"] = seed;
    j["aux"] = aux.is_null() ? Json::object() : aux;
    if (!std::isfinite(value)) throw NumericError("metric " + name + " is non-finite");
    return j;
  }
};

// root mean squared error between two stacks of fields, any equal shapes
inline double field_rmse(const Tensor& a, const Tensor& b) {
  ensure_same_shape(a, b, "rmse");
  if (a.numel() == 0) throw Error("rmse of empty tensors");
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.numel()));
}

inline double mean_rmse(const Tensor& pred_means, const Tensor& true_means) {
  return field_rmse(pred_means, true_means);
}

inline double variance_rmse(const Tensor& pred_vars, const Tensor& emp_vars) {
  return field_rmse(pred_vars, emp_vars);
}

namespace metric_detail {

// linear interpolation of the order statistics at quantile level p
inline double quantile_of_sorted(const std::vector<double>& sorted, double p) {
  const double n = static_cast<double>(sorted.size());
  double pos = p * n - 0.5;
  if (pos <= 0.0) return sorted.front();
  if (pos >= n - 1.0) return sorted.back();
  size_t lo = static_cast<size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// 1D W2 between two samples by quantile matching on a common grid of size
// max(S, S'). Equal sizes reduce to matched order statistics.
inline double w2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error("w2: need at least 2 samples on each side");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const size_t q = std::max(a.size(), b.size());
  double s = 0.0;
  for (size_t i = 0; i < q; ++i) {
    double p = (static_cast<double>(i) + 0.5) / static_cast<double>(q);
    double d = quantile_of_sorted(a, p) - quantile_of_sorted(b, p);
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(q));
}

}  // namespace metric_detail

// Spatially averaged empirical Wasserstein-2: per-point 1D W2 between the
// marginal sample sets, arithmetic mean over channels and grid points.
inline double empirical_w2(const Tensor& pred_samples, const Tensor& true_samples) {
  if (pred_samples.rank() != 3 || true_samples.rank() != 3)
    throw Error("empirical_w2: expected [S,C,N] sample stacks");
  if (pred_samples.dim(1) != true_samples.dim(1) || pred_samples.dim(2) != true_samples.dim(2))
    throw Error("empirical_w2: field shapes disagree");
  const int64_t S = pred_samples.dim(0), Sp = true_samples.dim(0);
  if (S < 2 || Sp < 2) throw Error("empirical_w2: need at least 2 samples on each side");
  const int64_t C = pred_samples.dim(1), N = pred_samples.dim(2);
  double acc = 0.0;
  std::vector<double> a(static_cast<size_t>(S)), b(static_cast<size_t>(Sp));
  for (int64_t c = 0; c < C; ++c)
    for (int64_t x = 0; x < N; ++x) {
      for (int64_t s = 0; s < S; ++s) a[static_cast<size_t>(s)] = pred_samples.at3(s, c, x);
      for (int64_t s = 0; s < Sp; ++s) b[static_cast<size_t>(s)] = true_samples.at3(s, c, x);
      acc += metric_detail::w2_1d(a, b);
    }
  return acc / static_cast<double>(C * N);
}

inline double gaussian_w2_1d(double m1, double s1, double m2, double s2) {
  if (s1 < 0.0 || s2 < 0.0) throw Error("gaussian_w2_1d: negative standard deviation");
  double dm = m1 - m2, ds = s1 - s2;
  return std::sqrt(dm * dm + ds * ds);
}

// ||B^T B - C_emp||_F / ||C_emp||_F on the flattened C*N coordinates
inline double cov_frobenius_rel(const Tensor& factor, const Tensor& true_samples) {
  if (true_samples.rank() != 3) throw Error("cov_frobenius_rel: samples must be [S,C,N]");
  const int64_t S = true_samples.dim(0);
  const int64_t inner = true_samples.dim(1) * true_samples.dim(2);
  if (S < 2) throw Error("cov_frobenius_rel: need at least 2 samples");
  if (inner > 4096) throw Error("cov_frobenius_rel: C*N too large to densify");
  if (factor.dim(1) * factor.dim(2) != inner) throw Error("cov_frobenius_rel: factor grid mismatch");

  std::vector<double> mean(static_cast<size_t>(inner), 0.0);
  for (int64_t s = 0; s < S; ++s)
    for (int64_t i = 0; i < inner; ++i)
      mean[static_cast<size_t>(i)] += true_samples.data[static_cast<size_t>(s * inner + i)];
  for (auto& m : mean) m /= static_cast<double>(S);

  Tensor c_emp(Shape{inner, inner});
  for (int64_t s = 0; s < S; ++s) {
    const double* row = &true_samples.data[static_cast<size_t>(s * inner)];
    for (int64_t i = 0; i < inner; ++i) {
      double di = row[i] - mean[static_cast<size_t>(i)];
      for (int64_t j = 0; j < inner; ++j) c_emp.at2(i, j) += di * (row[j] - mean[static_cast<size_t>(j)]);
    }
  }
  for (auto& v : c_emp.data) v /= static_cast<double>(S - 1);

  double c_norm = tensor_l2(c_emp);
  if (c_norm == 0.0) throw NumericError("cov_frobenius_rel: empirical covariance is identically zero");

  Tensor gram = op::densify_covariance(factor);
  double diff = 0.0;
  for (int64_t i = 0; i < inner * inner; ++i) {
    double d = gram[i] - c_emp[i];
    diff += d * d;
  }
  return std::sqrt(diff) / c_norm;
}

struct HurstEstimate {
  double h = 0.0;
  double slope = 0.0;
  bool ballistic_flag = false;  // slope near 2, deterministic trend
  std::vector<double> lags;
  std::vector<double> msd;
};

// Variogram regression: log E|X_{t+tau} - X_t|^2 against log tau over a
// dyadic lag ladder; H = slope / 2, clipped to (0, 1].
inline HurstEstimate hurst_estimate(const Tensor& paths) {
  if (paths.rank() != 2) throw Error("hurst_estimate: expected [n_paths, n_steps]");
  const int64_t P = paths.dim(0), T = paths.dim(1);
  if (T < 8) throw Error("hurst_estimate: need at least 8 time points");
  if (P < 10) throw Error("hurst_estimate: need at least 10 paths");

  HurstEstimate est;
  for (int64_t tau = 1; tau <= (T - 1) / 4; tau *= 2) {
    double s = 0.0;
    int64_t count = 0;
    for (int64_t p = 0; p < P; ++p)
      for (int64_t t = 0; t + tau < T; ++t) {
        double d = paths.at2(p, t + tau) - paths.at2(p, t);
        s += d * d;
        ++count;
      }
    double msd = s / static_cast<double>(count);
    if (msd <= 0.0) throw NumericError("hurst_estimate: degenerate zero-variance paths");
    est.lags.push_back(static_cast<double>(tau));
    est.msd.push_back(msd);
  }
  if (est.lags.size() < 2) throw Error("hurst_estimate: lag ladder too short");
  std::vector<double> lx(est.lags.size()), ly(est.lags.size());
  for (size_t i = 0; i < est.lags.size(); ++i) {
    lx[i] = std::log(est.lags[i]);
    ly[i] = std::log(est.msd[i]);
  }
  LineFit f = fit_line(lx, ly);
  est.slope = f.slope;
  est.ballistic_flag = f.slope > 1.8;
  est.h = std::min(std::max(f.slope / 2.0, 1e-6), 1.0);
  return est;
}

struct CorrelationReport {
  double max_abs_corr = 0.0;
  std::vector<std::string> skipped;  // zero-variance features
  Json per_feature;
};

// Pearson correlation between residual increments and named features.
inline CorrelationReport residual_correlation(const std::vector<double>& increments,
                                              const std::vector<std::pair<std::string, std::vector<double>>>& features) {
  if (increments.size() < 30) throw Error("residual_correlation: need at least 30 samples");
  CorrelationReport rep;
  rep.per_feature = Json::object();
  const double n = static_cast<double>(increments.size());
  double mi = 0.0;
  for (double v : increments) mi += v;
  mi /= n;
  double vi = 0.0;
  for (double v : increments) vi += (v - mi) * (v - mi);
  if (vi <= 0.0) throw NumericError("residual_correlation: increments have zero variance");
  for (const auto& [name, f] : features) {
    if (f.size() != increments.size()) throw Error("residual_correlation: feature length mismatch");
    double mf = 0.0;
    for (double v : f) mf += v;
    mf /= n;
    double vf = 0.0, cov = 0.0;
    for (size_t i = 0; i < f.size(); ++i) {
      vf += (f[i] - mf) * (f[i] - mf);
      cov += (f[i] - mf) * (increments[i] - mi);
    }
    if (vf <= 0.0) {
      rep.skipped.push_back(name);
      continue;
    }
    double corr = cov / std::sqrt(vi * vf);
    rep.per_feature[name] = corr;
    rep.max_abs_corr = std::max(rep.max_abs_corr, std::abs(corr));
  }
  return rep;
}

// Series form: residuals[s][t] over query times. Increments between
// consecutive times are pooled; the residual level at the left endpoint
// joins the feature list, and per-sample features broadcast across pairs.
inline CorrelationReport residual_correlation_series(
    const std::vector<std::vector<double>>& residuals,
    const std::vector<std::pair<std::string, std::vector<double>>>& sample_features) {
  if (residuals.empty() || residuals.front().size() < 2)
    throw Error("residual_correlation_series: need at least 2 query times");
  const size_t n_times = residuals.front().size();
  std::vector<double> increments;
  std::vector<double> level;
  for (const auto& r : residuals) {
    if (r.size() != n_times) throw Error("residual_correlation_series: ragged series");
    for (size_t t = 0; t + 1 < n_times; ++t) {
      increments.push_back(r[t + 1] - r[t]);
      level.push_back(r[t]);
    }
  }
  std::vector<std::pair<std::string, std::vector<double>>> features;
  for (const auto& [name, f] : sample_features) {
    if (f.size() != residuals.size()) throw Error("residual_correlation_series: feature length mismatch");
    std::vector<double> broad;
    broad.reserve(increments.size());
    for (size_t s = 0; s < residuals.size(); ++s)
      for (size_t t = 0; t + 1 < n_times; ++t) broad.push_back(f[s]);
    features.emplace_back(name, std::move(broad));
  }
  features.emplace_back("residual_level", std::move(level));
  return residual_correlation(increments, features);
}

struct ExceedanceResult {
  Tensor per_point;        // P(|u(c,x)| >= threshold)
  double union_bound = 0.0;  // min(1, sum of per-point probabilities)
  double max_point = 0.0;
};

// Two-sided Gaussian tail per point from the predicted moments.
inline ExceedanceResult exceedance_prob(const op::MomentPrediction& pred, double threshold) {
  if (threshold <= 0.0) throw Error("exceedance_prob: threshold must be positive");
  Tensor var = op::variance_from_factor(pred.factor);
  ExceedanceResult res;
  res.per_point = Tensor(var.shape);
  const double inv_sqrt2 = 0.70710678118654752440084436210485;
  double total = 0.0;
  for (int64_t i = 0; i < var.numel(); ++i) {
    double m = pred.mean[i];
    double s = std::sqrt(std::max(var[i], 0.0));
    double p;
    if (s == 0.0) {
      p = (std::abs(m) >= threshold) ? 1.0 : 0.0;
    } else {
      double upper = 0.5 * std::erfc((threshold - m) / s * inv_sqrt2);
      double lower = 0.5 * std::erfc((threshold + m) / s * inv_sqrt2);
      p = upper + lower;
    }
    res.per_point[i] = p;
    total += p;
    res.max_point = std::max(res.max_point, p);
  }
  res.union_bound = std::min(1.0, total);
  return res;
}

}  // namespace mno::metrics
