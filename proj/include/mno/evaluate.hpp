#pragma once

#include <chrono>
#include <set>
#include <string>
#include <vector>

#include "mno/dataset.hpp"
#include "mno/metrics.hpp"
#include "mno/model.hpp"
#include "mno/report.hpp"

namespace mno::eval {

// Batched moment predictions against a normalized dataset, plus the RMSE
// summaries every downstream consumer needs.
struct ModelEval {
  Tensor pred_means;  // [n_ic, C, N]
  Tensor pred_vars;   // [n_ic, C, N] raw sum_k B_k^2
  Tensor emp_means;   // ensemble estimates
  Tensor emp_vars;
  op::BatchMoments moments;
  double mean_rmse = 0.0;
  double variance_rmse = 0.0;
  double zero_variance_rmse = 0.0;  // error of predicting zero variance
};

inline ModelEval eval_moments(const op::MnoModel& model, const sim::EnsembleDataset& ds) {
  if (!ds.normalized) throw Error("eval_moments: dataset must be normalized");
  const int64_t n_ic = ds.n_ic(), C = ds.channels(), N = ds.grid();
  ModelEval ev;
  ev.moments = op::mno_forward_batch(model, ds.u0, ds.horizon);
  ev.pred_means = ev.moments.mean;
  ev.pred_vars = Tensor(Shape{n_ic, C, N});
  for (int64_t i = 0; i < n_ic; ++i) {
    Tensor v = op::variance_from_factor(ev.moments.item(i).factor);
    std::copy(v.data.begin(), v.data.end(), ev.pred_vars.data.begin() + i * C * N);
  }
  ev.emp_means = Tensor(Shape{n_ic, C, N});
  ev.emp_vars = Tensor(Shape{n_ic, C, N});
  for (int64_t i = 0; i < n_ic; ++i) {
    Tensor m = sim::ensemble_mean(ds.uT, i);
    std::copy(m.data.begin(), m.data.end(), ev.emp_means.data.begin() + i * C * N);
    if (ds.n_ens() >= 2) {
      Tensor v = sim::ensemble_variance(ds.uT, i);
      std::copy(v.data.begin(), v.data.end(), ev.emp_vars.data.begin() + i * C * N);
    }
  }
  ev.mean_rmse = metrics::mean_rmse(ev.pred_means, ev.emp_means);
  if (ds.n_ens() >= 2) {
    ev.variance_rmse = metrics::variance_rmse(ev.pred_vars, ev.emp_vars);
    ev.zero_variance_rmse = metrics::variance_rmse(Tensor::zeros(ev.emp_vars.shape), ev.emp_vars);
  }
  return ev;
}

struct EvalOptions {
  std::vector<std::string> metric_names = {"mean_rmse", "variance_rmse", "empirical_w2"};
  int64_t w2_samples = 256;
  double exceedance_threshold = 2.0;
  uint64_t seed = 0;
};

inline const std::set<std::string>& known_metrics() {
  static const std::set<std::string> k = {"mean_rmse",        "variance_rmse", "empirical_w2",
                                          "cov_frobenius_rel", "exceedance",    "timing"};
  return k;
}

// Computes the requested metrics of a model against a raw dataset. The
// dataset is normalized with the model's training statistics so numbers are
// comparable across evaluation grids.
inline ResultBundle evaluate_model(const op::MnoModel& model, const sim::EnsembleDataset& raw,
                                   const EvalOptions& opt) {
  for (const auto& name : opt.metric_names)
    if (!known_metrics().count(name)) {
      std::string valid;
      for (const auto& k : known_metrics()) valid += (valid.empty() ? "" : ", ") + k;
      throw ConfigError("unknown metric '" + name + "'; valid names: " + valid);
    }
  if (model.norm.mean.empty()) throw Error("evaluate_model: checkpoint carries no normalization stats");
  sim::EnsembleDataset ds = raw.normalized ? raw : sim::normalize_with(raw, model.norm);

  ResultBundle bundle;
  auto want = [&](const std::string& n) {
    for (const auto& m : opt.metric_names)
      if (m == n) return true;
    return false;
  };

  auto tic = std::chrono::steady_clock::now();
  ModelEval ev = eval_moments(model, ds);
  double forward_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();

  const int64_t n_ic = ds.n_ic();
  if (want("mean_rmse")) {
    metrics::MetricRecord r;
    r.name = "mean_rmse";
    r.value = ev.mean_rmse;
    r.n_samples = n_ic * ds.n_ens();
    r.seed = opt.seed;
    bundle.records.push_back(r);
  }
  if (want("variance_rmse") && ds.n_ens() >= 2) {
    metrics::MetricRecord r;
    r.name = "variance_rmse";
    r.value = ev.variance_rmse;
    r.n_samples = n_ic * ds.n_ens();
    r.seed = opt.seed;
    r.aux["zero_variance_rmse"] = ev.zero_variance_rmse;
    bundle.records.push_back(r);
  }
  if (want("empirical_w2")) {
    double acc = 0.0;
    for (int64_t i = 0; i < n_ic; ++i) {
      op::MomentPrediction pred = ev.moments.item(i);
      Tensor samples = op::sample_terminal(pred, opt.w2_samples, opt.seed + static_cast<uint64_t>(i));
      Tensor truth(Shape{ds.n_ens(), ds.channels(), ds.grid()});
      std::copy(ds.uT.data.begin() + i * ds.n_ens() * ds.channels() * ds.grid(),
                ds.uT.data.begin() + (i + 1) * ds.n_ens() * ds.channels() * ds.grid(),
                truth.data.begin());
      acc += metrics::empirical_w2(samples, truth);
    }
    metrics::MetricRecord r;
    r.name = "empirical_w2";
    r.value = acc / static_cast<double>(n_ic);
    r.n_samples = opt.w2_samples;
    r.seed = opt.seed;
    bundle.records.push_back(r);
  }
  if (want("cov_frobenius_rel")) {
    double acc = 0.0;
    for (int64_t i = 0; i < n_ic; ++i) {
      Tensor truth(Shape{ds.n_ens(), ds.channels(), ds.grid()});
      std::copy(ds.uT.data.begin() + i * ds.n_ens() * ds.channels() * ds.grid(),
                ds.uT.data.begin() + (i + 1) * ds.n_ens() * ds.channels() * ds.grid(),
                truth.data.begin());
      acc += metrics::cov_frobenius_rel(ev.moments.item(i).factor, truth);
    }
    metrics::MetricRecord r;
    r.name = "cov_frobenius_rel";
    r.value = acc / static_cast<double>(n_ic);
    r.n_samples = ds.n_ens();
    r.seed = opt.seed;
    bundle.records.push_back(r);
  }
  if (want("exceedance")) {
    double union_acc = 0.0, max_acc = 0.0;
    for (int64_t i = 0; i < n_ic; ++i) {
      metrics::ExceedanceResult ex =
          metrics::exceedance_prob(ev.moments.item(i), opt.exceedance_threshold);
      union_acc += ex.union_bound;
      max_acc += ex.max_point;
    }
    metrics::MetricRecord r;
    r.name = "exceedance";
    r.value = max_acc / static_cast<double>(n_ic);
    r.n_samples = n_ic;
    r.seed = opt.seed;
    r.aux["union_bound_mean"] = union_acc / static_cast<double>(n_ic);
    r.aux["threshold"] = opt.exceedance_threshold;
    bundle.records.push_back(r);
  }
  if (want("timing")) {
    metrics::MetricRecord r;
    r.name = "forward_ms";
    r.value = forward_ms / static_cast<double>(n_ic);
    r.n_samples = n_ic;
    r.seed = opt.seed;
    bundle.records.push_back(r);
  }
  bundle.timings["batched_forward_ms"] = forward_ms;
  return bundle;
}

}  // namespace mno::eval
