#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mno/evaluate.hpp"
#include "mno/fbm.hpp"
#include "mno/metrics.hpp"
#include "mno/model.hpp"
#include "mno/report.hpp"
#include "mno/stochsim.hpp"
#include "mno/train.hpp"

namespace mno::diag {

// Moment predictor over normalized inputs; lets analytic oracles stand in
// for trained models in the structural checks.
using MomentFn = std::function<op::MomentPrediction(const Tensor& u0, double t)>;

inline MomentFn model_predictor(const op::MnoModel& m) {
  return [&m](const Tensor& u0, double t) { return op::mno_forward(m, u0, t); };
}

namespace diag_detail {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
};

inline Tensor ic_slice(const sim::EnsembleDataset& ds, int64_t i) {
  Tensor u0(Shape{ds.channels(), ds.grid()});
  std::copy(ds.u0.data.begin() + i * u0.numel(), ds.u0.data.begin() + (i + 1) * u0.numel(),
            u0.data.begin());
  return u0;
}

inline Tensor members_slice(const sim::EnsembleDataset& ds, int64_t i) {
  Tensor t(Shape{ds.n_ens(), ds.channels(), ds.grid()});
  std::copy(ds.uT.data.begin() + i * t.numel(), ds.uT.data.begin() + (i + 1) * t.numel(),
            t.data.begin());
  return t;
}

}  // namespace diag_detail

// ---- Diagnostic I: residual centering and scaling ----

struct CenteringThresholds {
  double mean_residual = 0.1;       // RMS of the ensemble-mean residual, normalized units
  double slope_lo = 0.8;            // variance growth window for Brownian-scaling data
  double slope_hi = 1.2;
  double max_corr = 0.1;
};

// snapshots: (query time, dataset of terminal states at that time), all
// normalized in the same coordinates the predictor expects. The growth
// check (ii) needs >= 3 distinct times and Brownian-scaling data; with
// fewer times only (i) and (iii) are evaluated.
inline DiagnosticReport run_residual_centering(
    const MomentFn& predict, const std::vector<std::pair<double, const sim::EnsembleDataset*>>& snapshots,
    const CenteringThresholds& th, uint64_t seed, bool check_growth = true) {
  if (snapshots.size() < 3) throw Error("run_residual_centering: need at least 3 query times");
  diag_detail::Timer timer;
  DiagnosticReport rep;
  rep.name = "residual_centering";
  rep.seed = seed;
  rep.thresholds["mean_residual"] = th.mean_residual;
  rep.thresholds["slope_lo"] = th.slope_lo;
  rep.thresholds["slope_hi"] = th.slope_hi;
  rep.thresholds["max_corr"] = th.max_corr;

  // (i) ensemble-mean residual magnitude at each queried time
  double worst_mean_resid = 0.0;
  std::vector<double> times, mean_vars;
  for (const auto& [t, ds] : snapshots) {
    double acc = 0.0;
    double var_acc = 0.0;
    for (int64_t i = 0; i < ds->n_ic(); ++i) {
      Tensor u0 = diag_detail::ic_slice(*ds, i);
      op::MomentPrediction pred = predict(u0, t);
      Tensor emp_mean = sim::ensemble_mean(ds->uT, i);
      acc += metrics::field_rmse(pred.mean, emp_mean);
      var_acc += tensor_mean(op::variance_from_factor(pred.factor));
    }
    acc /= static_cast<double>(ds->n_ic());
    var_acc /= static_cast<double>(ds->n_ic());
    worst_mean_resid = std::max(worst_mean_resid, acc);
    times.push_back(t);
    mean_vars.push_back(var_acc);
  }
  bool pass_mean = worst_mean_resid <= th.mean_residual;

  // (ii) log-log slope of predicted variance against time
  bool pass_slope = true;
  double slope = 0.0;
  if (check_growth) {
    std::vector<double> lx, ly;
    for (size_t i = 0; i < times.size(); ++i) {
      if (times[i] <= 0.0 || mean_vars[i] <= 0.0)
        throw NumericError("run_residual_centering: nonpositive time or variance in growth check");
      lx.push_back(std::log(times[i]));
      ly.push_back(std::log(mean_vars[i]));
    }
    slope = fit_line(lx, ly).slope;
    pass_slope = slope >= th.slope_lo && slope <= th.slope_hi;
  }

  // (iii) correlation between residual increments and past-state features
  const auto& [t_last, ds_last] = snapshots.back();
  std::vector<std::vector<double>> series;
  std::vector<double> f_mean, f_energy;
  for (int64_t i = 0; i < ds_last->n_ic(); ++i) {
    Tensor u0 = diag_detail::ic_slice(*ds_last, i);
    op::MomentPrediction pred = predict(u0, t_last);
    double u0m = tensor_mean(u0);
    double u0e = 0.0;
    for (double v : u0.data) u0e += v * v;
    u0e /= static_cast<double>(u0.numel());
    for (int64_t e = 0; e < ds_last->n_ens(); ++e) {
      double r = 0.0;
      for (int64_t c = 0; c < ds_last->channels(); ++c)
        for (int64_t x = 0; x < ds_last->grid(); ++x)
          r += ds_last->uT.at4(i, e, c, x) - pred.mean.at2(c, x);
      r /= static_cast<double>(ds_last->channels() * ds_last->grid());
      series.push_back({0.0, r});  // residual starts at zero by construction
      f_mean.push_back(u0m);
      f_energy.push_back(u0e);
    }
  }
  metrics::CorrelationReport corr = metrics::residual_correlation_series(
      series, {{"u0_mean", f_mean}, {"u0_energy", f_energy}});
  bool pass_corr = corr.max_abs_corr <= th.max_corr;

  rep.evidence["worst_mean_residual"] = worst_mean_resid;
  rep.evidence["variance_growth_slope"] = slope;
  rep.evidence["growth_checked"] = check_growth;
  rep.evidence["max_abs_corr"] = corr.max_abs_corr;
  rep.evidence["per_feature_corr"] = corr.per_feature;
  rep.pass = pass_mean && pass_slope && pass_corr;
  rep.runtime_ms = timer.ms();
  return rep;
}

// ---- Diagnostic II: martingale mirror ----

struct MirrorConfig {
  int n_ar_steps = 16;
  int n_ar_paths = 256;
  int64_t oneshot_samples = 512;
  double whiten_gap = 0.15;    // required H_ar - H_true
  double w2_rel_bound = 0.5;   // one-shot terminal W2 relative to the true std
  uint64_t seed = 7;
};

// Contrasts one-shot terminal prediction with autoregressive reuse of the
// same operator. The state is scalar (the path-as-field datasets condition
// on a constant field); each AR step queries the model a duration dt ahead
// and samples the marginal at path coordinate dt.
inline DiagnosticReport run_martingale_mirror(const op::MnoModel& model,
                                              const sim::EnsembleDataset& raw_logvol, double h_true,
                                              const MirrorConfig& cfg) {
  diag_detail::Timer timer;
  if (raw_logvol.normalized) throw Error("run_martingale_mirror: pass the raw dataset");
  sim::EnsembleDataset ds = sim::normalize_with(raw_logvol, model.norm);
  const int64_t n_t = ds.grid();
  if (cfg.n_ar_steps < 8) throw Error("run_martingale_mirror: need at least 8 AR steps");
  if (n_t % cfg.n_ar_steps != 0)
    throw Error("run_martingale_mirror: AR step count must divide the path grid");
  const int64_t stride = n_t / cfg.n_ar_steps;
  const double dt = ds.horizon / static_cast<double>(cfg.n_ar_steps);
  const int64_t coord_idx = stride - 1;  // path coordinate dt on the grid (j+1) T / n_t

  // Hurst of the ground-truth paths (prepend the known start value)
  {
    // use up to 1000 member paths
  }
  int64_t total_paths = std::min<int64_t>(ds.n_ic() * ds.n_ens(), 1000);
  Tensor data_paths(Shape{total_paths, n_t + 1});
  for (int64_t p = 0; p < total_paths; ++p) {
    int64_t i = p % ds.n_ic();
    int64_t e = (p / ds.n_ic()) % ds.n_ens();
    data_paths.at2(p, 0) = raw_logvol.u0.at3(i, 0, 0);
    for (int64_t j = 0; j < n_t; ++j) data_paths.at2(p, j + 1) = raw_logvol.uT.at4(i, e, 0, j);
  }
  metrics::HurstEstimate h_data = metrics::hurst_estimate(data_paths);

  // AR rollout in normalized coordinates
  const int64_t P = cfg.n_ar_paths;
  Tensor ar_paths(Shape{P, cfg.n_ar_steps + 1});
  std::vector<double> state(static_cast<size_t>(P));
  for (int64_t p = 0; p < P; ++p) {
    state[static_cast<size_t>(p)] = ds.u0.at3(p % ds.n_ic(), 0, 0);
    ar_paths.at2(p, 0) = state[static_cast<size_t>(p)];
  }
  RngStream rng = make_stream(cfg.seed, 0xa11ULL);
  for (int s = 0; s < cfg.n_ar_steps; ++s) {
    Tensor batch(Shape{P, 1, n_t});
    for (int64_t p = 0; p < P; ++p)
      for (int64_t j = 0; j < n_t; ++j) batch.at3(p, 0, j) = state[static_cast<size_t>(p)];
    op::BatchMoments pred = op::mno_forward_batch(model, batch, dt);
    for (int64_t p = 0; p < P; ++p) {
      double mean_at = pred.mean.at3(p, 0, coord_idx);
      double var_at = 0.0;
      for (int64_t k = 0; k < pred.factor.dim(1); ++k) {
        double b = pred.factor.at4(p, k, 0, coord_idx);
        var_at += b * b;
      }
      double next = mean_at + std::sqrt(std::max(var_at, 0.0)) * rng.gauss();
      if (!std::isfinite(next) || std::abs(next) > 1e6)
        throw NumericError("run_martingale_mirror: AR rollout diverged at step " + std::to_string(s));
      state[static_cast<size_t>(p)] = next;
      ar_paths.at2(p, s + 1) = next;
    }
  }
  metrics::HurstEstimate h_ar = metrics::hurst_estimate(ar_paths);

  // one-shot terminal W2, relative to the true terminal spread
  double w2_acc = 0.0, std_acc = 0.0;
  int64_t n_eval = std::min<int64_t>(ds.n_ic(), 8);
  for (int64_t i = 0; i < n_eval; ++i) {
    op::MomentPrediction pred = op::mno_forward(model, diag_detail::ic_slice(ds, i), ds.horizon);
    Tensor samples = op::sample_terminal(pred, cfg.oneshot_samples, cfg.seed + 31 + static_cast<uint64_t>(i));
    std::vector<double> pred_term(static_cast<size_t>(cfg.oneshot_samples));
    for (int64_t s = 0; s < cfg.oneshot_samples; ++s)
      pred_term[static_cast<size_t>(s)] = samples.at3(s, 0, n_t - 1);
    std::vector<double> true_term(static_cast<size_t>(ds.n_ens()));
    for (int64_t e = 0; e < ds.n_ens(); ++e)
      true_term[static_cast<size_t>(e)] = ds.uT.at4(i, e, 0, n_t - 1);
    Tensor a(Shape{cfg.oneshot_samples, 1, 1}, pred_term);
    Tensor b(Shape{ds.n_ens(), 1, 1}, true_term);
    w2_acc += metrics::empirical_w2(a, b);
    double mu = 0.0;
    for (double v : true_term) mu += v;
    mu /= static_cast<double>(true_term.size());
    double var = 0.0;
    for (double v : true_term) var += (v - mu) * (v - mu);
    std_acc += std::sqrt(var / static_cast<double>(true_term.size() - 1));
  }
  double w2_oneshot = w2_acc / static_cast<double>(n_eval);
  double true_std = std_acc / static_cast<double>(n_eval);

  DiagnosticReport rep;
  rep.name = "martingale_mirror";
  rep.seed = cfg.seed;
  rep.thresholds["whiten_gap"] = cfg.whiten_gap;
  rep.thresholds["w2_rel_bound"] = cfg.w2_rel_bound;
  rep.evidence["h_true"] = h_true;
  rep.evidence["h_data"] = h_data.h;
  rep.evidence["h_ar"] = h_ar.h;
  rep.evidence["w2_oneshot"] = w2_oneshot;
  rep.evidence["true_terminal_std"] = true_std;
  rep.evidence["w2_rel"] = w2_oneshot / true_std;
  rep.pass = (h_ar.h - h_true >= cfg.whiten_gap) && (w2_oneshot <= cfg.w2_rel_bound * true_std);
  rep.runtime_ms = timer.ms();
  return rep;
}

// ---- Diagnostic III: resolution transfer ----

struct TransferThresholds {
  double mean_growth = 2.0;     // mean RMSE at the finest grid vs the training grid
  double variance_ratio = 1.0;  // variance RMSE vs the zero-variance predictor
};

inline DiagnosticReport run_resolution_transfer(
    const op::MnoModel& model, const std::vector<std::pair<int64_t, const sim::EnsembleDataset*>>& raw_by_res,
    const TransferThresholds& th, uint64_t seed, CsvTable* evidence_csv = nullptr) {
  if (raw_by_res.size() < 2) throw Error("run_resolution_transfer: need at least 2 resolutions");
  diag_detail::Timer timer;
  for (const auto& [n, ds] : raw_by_res)
    if (model.cfg.fno.modes > n / 2 + 1)
      throw Error("run_resolution_transfer: " + std::to_string(model.cfg.fno.modes) +
                  " modes exceed capacity " + std::to_string(n / 2 + 1) + " of grid " + std::to_string(n));

  CsvTable table;
  table.columns = {"resolution", "mean_rmse", "variance_rmse", "zero_variance_rmse"};
  std::vector<double> mean_rmses;
  bool var_ok = true;
  for (const auto& [n, raw] : raw_by_res) {
    sim::EnsembleDataset ds = sim::normalize_with(*raw, model.norm);
    eval::ModelEval ev = eval::eval_moments(model, ds);
    table.add_row({static_cast<double>(n), ev.mean_rmse, ev.variance_rmse, ev.zero_variance_rmse});
    mean_rmses.push_back(ev.mean_rmse);
    if (ev.variance_rmse >= th.variance_ratio * ev.zero_variance_rmse) var_ok = false;
  }
  DiagnosticReport rep;
  rep.name = "resolution_transfer";
  rep.seed = seed;
  rep.thresholds["mean_growth"] = th.mean_growth;
  rep.thresholds["variance_ratio"] = th.variance_ratio;
  rep.evidence["mean_rmse_train_res"] = mean_rmses.front();
  rep.evidence["mean_rmse_finest"] = mean_rmses.back();
  for (size_t i = 0; i < raw_by_res.size(); ++i) {
    std::string key = "res_" + std::to_string(raw_by_res[i].first);
    rep.evidence[key + "_mean_rmse"] = table.rows[i][1];
    rep.evidence[key + "_variance_rmse"] = table.rows[i][2];
    rep.evidence[key + "_zero_variance_rmse"] = table.rows[i][3];
  }
  rep.pass = (mean_rmses.back() <= th.mean_growth * mean_rmses.front()) && var_ok;
  rep.runtime_ms = timer.ms();
  if (evidence_csv) *evidence_csv = table;
  return rep;
}

// ---- Diagnostic IV: head separation ----

struct HeadSepConfig {
  op::ModelConfig model;
  train::TrainConfig train;
  train::LossWeights weights;
  sim::SynthSpec synth;
  int64_t n_ic = 48;
  int64_t n_ens = 256;
  int64_t n_ic_test = 24;
  double off_on_ratio = 1e-2;
  double both_factor = 2.0;
  uint64_t seed = 11;
};

struct HeadEnergies {
  double drift = 0.0;       // mean squared gated drift increment, physical units
  double covariance = 0.0;  // mean predicted variance, physical units
};

namespace diag_detail {

inline HeadEnergies head_energies(const op::MnoModel& model, const sim::EnsembleDataset& raw_test) {
  sim::EnsembleDataset ds = sim::normalize_with(raw_test, model.norm);
  op::BatchMoments pred = op::mno_forward_batch(model, ds.u0, ds.horizon);
  HeadEnergies e;
  const int64_t n_ic = ds.n_ic(), C = ds.channels(), N = ds.grid();
  for (int64_t i = 0; i < n_ic; ++i) {
    op::MomentPrediction p = pred.item(i);
    Tensor v = op::variance_from_factor(p.factor);
    for (int64_t c = 0; c < C; ++c) {
      double sd = model.norm.std_dev[static_cast<size_t>(c)];
      for (int64_t x = 0; x < N; ++x) {
        double drift_phys = (p.mean.at2(c, x) - ds.u0.at3(i, c, x)) * sd;
        e.drift += drift_phys * drift_phys;
        e.covariance += v.at2(c, x) * sd * sd;
      }
    }
  }
  double count = static_cast<double>(n_ic * C * N);
  e.drift /= count;
  e.covariance /= count;
  return e;
}

inline op::MnoModel train_on(const sim::EnsembleDataset& raw, const op::ModelConfig& mc,
                             const train::TrainConfig& tc, const train::LossWeights& w,
                             uint64_t init_seed) {
  sim::NormStats stats;
  sim::EnsembleDataset ds = sim::normalize_dataset(raw, &stats);
  op::ModelConfig cfg = mc;
  cfg.t_scale = raw.horizon;
  op::MnoModel model = op::init_mno(cfg, init_seed);
  model.norm = stats;
  train::TrainResult res = train::fit(std::move(model), ds, tc, w);
  if (res.diverged) throw NumericError("diagnostic training diverged: " + res.divergence_message);
  return std::move(res.model);
}

}  // namespace diag_detail

inline DiagnosticReport run_head_separation(const HeadSepConfig& cfg, CsvTable* evidence_csv = nullptr) {
  diag_detail::Timer timer;
  HeadEnergies energies[3];
  const sim::SynthCase cases[3] = {sim::SynthCase::PureDrift, sim::SynthCase::PureNoise,
                                   sim::SynthCase::DriftNoise};
  const char* names[3] = {"A", "B", "C"};
  for (int ci = 0; ci < 3; ++ci) {
    sim::EnsembleDataset train_ds =
        sim::synth_head_separation(cases[ci], cfg.synth, cfg.n_ic, cfg.n_ens, cfg.seed);
    sim::EnsembleDataset test_ds =
        sim::synth_head_separation(cases[ci], cfg.synth, cfg.n_ic_test, cfg.n_ens, cfg.seed + 1);
    op::MnoModel model =
        diag_detail::train_on(train_ds, cfg.model, cfg.train, cfg.weights, cfg.seed + 100 + static_cast<uint64_t>(ci));
    energies[ci] = diag_detail::head_energies(model, test_ds);
  }

  DiagnosticReport rep;
  rep.name = "head_separation";
  rep.seed = cfg.seed;
  rep.thresholds["off_on_ratio"] = cfg.off_on_ratio;
  rep.thresholds["both_factor"] = cfg.both_factor;
  bool a_ok = energies[0].covariance <= cfg.off_on_ratio * energies[0].drift;
  bool b_ok = energies[1].drift <= cfg.off_on_ratio * energies[1].covariance;
  auto within = [&](double x, double ref) {
    return x <= cfg.both_factor * ref && x >= ref / cfg.both_factor;
  };
  bool c_ok = within(energies[2].drift, energies[0].drift) &&
              within(energies[2].covariance, energies[1].covariance);
  for (int ci = 0; ci < 3; ++ci) {
    rep.evidence[std::string("case_") + names[ci] + "_drift_energy"] = energies[ci].drift;
    rep.evidence[std::string("case_") + names[ci] + "_cov_energy"] = energies[ci].covariance;
  }
  rep.evidence["case_A_off_on_ratio"] = energies[0].covariance / std::max(energies[0].drift, 1e-300);
  rep.evidence["case_B_off_on_ratio"] = energies[1].drift / std::max(energies[1].covariance, 1e-300);
  rep.pass = a_ok && b_ok && c_ok;
  rep.runtime_ms = timer.ms();
  if (evidence_csv) {
    evidence_csv->columns = {"case", "drift_energy", "cov_energy"};
    for (int ci = 0; ci < 3; ++ci)
      evidence_csv->add_row({static_cast<double>(ci), energies[ci].drift, energies[ci].covariance});
  }
  return rep;
}

// ---- Diagnostic V: uncertainty decomposition ----

struct UncertaintyConfig {
  op::ModelConfig model;
  train::TrainConfig train;
  train::LossWeights weights;
  sim::SynthSpec synth;        // case-B generator; noise_var is the truth
  int64_t n_ic = 48;
  int64_t n_ens = 256;
  int64_t n_ic_test = 24;
  int ensemble_members = 3;    // deliberately under-trained epistemic proxy
  double undertrain_fraction = 0.1;
  double aleatoric_rel_tol = 0.25;
  double ood_amp_factor = 3.0;
  uint64_t seed = 13;
};

inline DiagnosticReport run_uncertainty_decomposition(const UncertaintyConfig& cfg) {
  if (cfg.ensemble_members < 3) throw Error("run_uncertainty_decomposition: need M >= 3");
  diag_detail::Timer timer;
  sim::EnsembleDataset train_ds =
      sim::synth_head_separation(sim::SynthCase::PureNoise, cfg.synth, cfg.n_ic, cfg.n_ens, cfg.seed);
  sim::EnsembleDataset test_ds = sim::synth_head_separation(sim::SynthCase::PureNoise, cfg.synth,
                                                            cfg.n_ic_test, cfg.n_ens, cfg.seed + 1);
  sim::SynthSpec ood_spec = cfg.synth;
  ood_spec.u0_amp *= cfg.ood_amp_factor;
  sim::EnsembleDataset ood_ds = sim::synth_head_separation(sim::SynthCase::PureNoise, ood_spec,
                                                           cfg.n_ic_test, cfg.n_ens, cfg.seed + 2);

  // full model: aleatoric scalar = spatial mean of the predicted variance
  op::MnoModel full =
      diag_detail::train_on(train_ds, cfg.model, cfg.train, cfg.weights, cfg.seed + 100);
  double aleatoric_pred = 0.0;
  {
    sim::EnsembleDataset ds = sim::normalize_with(test_ds, full.norm);
    eval::ModelEval ev = eval::eval_moments(full, ds);
    double sd2 = full.norm.std_dev[0] * full.norm.std_dev[0];
    aleatoric_pred = tensor_mean(ev.pred_vars) * sd2;
  }
  double aleatoric_true = cfg.synth.noise_var;
  double rel_err = std::abs(aleatoric_pred - aleatoric_true) / aleatoric_true;

  // under-trained ensemble: variance across member mean predictions
  train::TrainConfig short_cfg = cfg.train;
  short_cfg.epochs = std::max(1, static_cast<int>(cfg.train.epochs * cfg.undertrain_fraction));
  short_cfg.warmup_epochs = std::min(short_cfg.warmup_epochs, short_cfg.epochs - 1);
  auto epistemic_on = [&](const sim::EnsembleDataset& raw, std::vector<op::MnoModel>& members) {
    const int64_t n_ic = raw.n_ic(), C = raw.channels(), N = raw.grid();
    Tensor acc(Shape{n_ic, C, N}), acc2(Shape{n_ic, C, N});
    for (auto& m : members) {
      sim::EnsembleDataset ds = sim::normalize_with(raw, m.norm);
      eval::ModelEval ev = eval::eval_moments(m, ds);
      double sd = m.norm.std_dev[0];
      for (int64_t i = 0; i < acc.numel(); ++i) {
        double phys = ev.pred_means[i] * sd + m.norm.mean[0];
        acc[i] += phys;
        acc2[i] += phys * phys;
      }
    }
    double m_count = static_cast<double>(members.size());
    double mean_var = 0.0;
    for (int64_t i = 0; i < acc.numel(); ++i) {
      double mu = acc[i] / m_count;
      mean_var += std::max(acc2[i] / m_count - mu * mu, 0.0) * m_count / (m_count - 1.0);
    }
    return mean_var / static_cast<double>(acc.numel());
  };
  std::vector<op::MnoModel> members;
  for (int m = 0; m < cfg.ensemble_members; ++m) {
    train::TrainConfig tc = short_cfg;
    tc.seed = cfg.seed + 500 + static_cast<uint64_t>(m);
    members.push_back(
        diag_detail::train_on(train_ds, cfg.model, tc, cfg.weights, cfg.seed + 200 + static_cast<uint64_t>(m)));
  }
  double epistemic_in = epistemic_on(test_ds, members);
  double epistemic_out = epistemic_on(ood_ds, members);

  DiagnosticReport rep;
  rep.name = "uncertainty_decomposition";
  rep.seed = cfg.seed;
  rep.thresholds["aleatoric_rel_tol"] = cfg.aleatoric_rel_tol;
  rep.evidence["aleatoric_true"] = aleatoric_true;
  rep.evidence["aleatoric_pred"] = aleatoric_pred;
  rep.evidence["aleatoric_rel_err"] = rel_err;
  rep.evidence["epistemic_in_dist"] = epistemic_in;    // qualitative
  rep.evidence["epistemic_out_dist"] = epistemic_out;  // qualitative
  rep.pass = rel_err <= cfg.aleatoric_rel_tol;
  rep.runtime_ms = timer.ms();
  return rep;
}

// ---- Ablations ----

struct AblationConfig {
  op::ModelConfig model;
  train::TrainConfig train;
  train::LossWeights weights;
  sim::SpdeSpec spde;
  int64_t n_ic = 64;
  int64_t n_ens = 32;
  int64_t n_ic_test = 32;
  int64_t sample_count = 4000;  // for the rank-axis cost measurement
  uint64_t seed = 17;
};

struct AblationCell {
  std::string label;
  uint64_t seed = 0;
  bool diverged = false;
  double mean_rmse = 0.0;
  double variance_rmse = 0.0;
  double sample_ms = 0.0;
  double factor_bytes = 0.0;
};

namespace diag_detail {

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty set");
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return (n % 2) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double time_sampling(const op::MomentPrediction& pred, int64_t n_samples, uint64_t seed) {
  // median of repeated timings; the first call warms caches
  std::vector<double> times;
  for (int rep = 0; rep < 7; ++rep) {
    Timer t;
    Tensor s = op::sample_terminal(pred, n_samples, seed + static_cast<uint64_t>(rep));
    times.push_back(t.ms());
    if (s.numel() == 0) throw Error("unreachable");
  }
  return median(times);
}

}  // namespace diag_detail

// Trains one model per (cell, seed) on a shared dataset pair and reports
// per-cell metrics. Axes: rank (also measures sampling cost), backbone
// (shared vs split), loss (term leave-one-out).
inline ResultBundle run_ablation(const std::string& axis, const std::vector<std::string>& grid,
                                 const std::vector<uint64_t>& seeds, const AblationConfig& cfg,
                                 CsvTable* evidence_csv = nullptr) {
  if (grid.empty()) throw ConfigError("run_ablation: empty grid");
  if (seeds.empty()) throw ConfigError("run_ablation: need at least one seed");
  if (axis != "rank" && axis != "backbone" && axis != "loss")
    throw ConfigError("run_ablation: unknown axis " + axis + " (expected rank|backbone|loss)");

  sim::EnsembleDataset train_raw = sim::simulate_spde_ensemble(cfg.spde, cfg.n_ic, cfg.n_ens, cfg.seed);
  sim::EnsembleDataset test_raw =
      sim::simulate_spde_ensemble(cfg.spde, cfg.n_ic_test, cfg.n_ens, cfg.seed + 1);

  std::vector<AblationCell> cells;
  for (const auto& g : grid) {
    for (uint64_t seed : seeds) {
      AblationCell cell;
      cell.label = g;
      cell.seed = seed;
      op::ModelConfig mc = cfg.model;
      train::LossWeights w = cfg.weights;
      if (axis == "rank") {
        mc.rank = std::stoi(g);
      } else if (axis == "backbone") {
        if (g == "shared")
          mc.shared_backbone = true;
        else if (g == "split")
          mc.shared_backbone = false;
        else
          throw ConfigError("backbone grid entries must be shared|split, got " + g);
      } else {
        if (g == "full") {
        } else if (g == "no_consistency") {
          w.gamma = 0.0;
        } else if (g == "no_martingale") {
          w.epsilon = 0.0;
        } else if (g == "no_reg") {
          w.delta = 0.0;
        } else if (g == "nll_only") {
          w.gamma = w.epsilon = w.delta = 0.0;
        } else {
          throw ConfigError(
              "loss grid entries must be full|no_consistency|no_martingale|no_reg|nll_only, got " + g);
        }
      }
      train::TrainConfig tc = cfg.train;
      tc.seed = seed;
      try {
        op::MnoModel model = diag_detail::train_on(train_raw, mc, tc, w, seed + 900);
        sim::EnsembleDataset test_ds = sim::normalize_with(test_raw, model.norm);
        eval::ModelEval ev = eval::eval_moments(model, test_ds);
        cell.mean_rmse = ev.mean_rmse;
        cell.variance_rmse = ev.variance_rmse;
        if (axis == "rank") {
          op::MomentPrediction pred = ev.moments.item(0);
          cell.sample_ms = diag_detail::time_sampling(pred, cfg.sample_count, seed);
          cell.factor_bytes = static_cast<double>(pred.factor.numel() * sizeof(double));
        }
      } catch (const NumericError& e) {
        cell.diverged = true;  // recorded, not fatal
      }
      cells.push_back(cell);
    }
  }

  ResultBundle bundle;
  CsvTable table;
  table.columns = {"cell", "seed", "diverged", "mean_rmse", "variance_rmse", "sample_ms", "factor_bytes"};
  for (size_t ci = 0; ci < cells.size(); ++ci) {
    const auto& c = cells[ci];
    table.add_row({static_cast<double>(std::distance(grid.begin(),
                                                     std::find(grid.begin(), grid.end(), c.label))),
                   static_cast<double>(c.seed), c.diverged ? 1.0 : 0.0, c.mean_rmse, c.variance_rmse,
                   c.sample_ms, c.factor_bytes});
  }

  // per-cell aggregates over seeds
  for (const auto& g : grid) {
    std::vector<double> means, vars, times, bytes;
    for (const auto& c : cells)
      if (c.label == g && !c.diverged) {
        means.push_back(c.mean_rmse);
        vars.push_back(c.variance_rmse);
        if (axis == "rank") {
          times.push_back(c.sample_ms);
          bytes.push_back(c.factor_bytes);
        }
      }
    metrics::MetricRecord rec;
    rec.name = "ablation_" + axis + "_" + g + "_mean_rmse_median";
    rec.value = means.empty() ? std::numeric_limits<double>::quiet_NaN() : diag_detail::median(means);
    rec.n_samples = static_cast<int64_t>(means.size());
    rec.seed = cfg.seed;
    if (!vars.empty()) rec.aux["variance_rmse_median"] = diag_detail::median(vars);
    if (!times.empty()) rec.aux["sample_ms_median"] = diag_detail::median(times);
    if (!bytes.empty()) rec.aux["factor_bytes"] = bytes.front();
    if (means.empty()) rec.value = -1.0;  // all seeds diverged for this cell
    bundle.records.push_back(rec);
  }

  // the rank axis carries the linear cost statement
  if (axis == "rank") {
    std::vector<double> rs, ts, bs;
    for (const auto& g : grid) {
      std::vector<double> times;
      double bytes = 0.0;
      for (const auto& c : cells)
        if (c.label == g && !c.diverged) {
          times.push_back(c.sample_ms);
          bytes = c.factor_bytes;
        }
      if (times.empty()) continue;
      rs.push_back(static_cast<double>(std::stoi(g)));
      ts.push_back(diag_detail::median(times));
      bs.push_back(bytes);
    }
    DiagnosticReport lin;
    lin.name = "rank_cost_linearity";
    lin.seed = cfg.seed;
    lin.thresholds["r2_min"] = 0.95;
    if (rs.size() >= 2) {
      LineFit tf = fit_line(rs, ts);
      LineFit bf = fit_line(rs, bs);
      lin.evidence["time_r2"] = tf.r2;
      lin.evidence["time_slope_ms_per_rank"] = tf.slope;
      lin.evidence["bytes_r2"] = bf.r2;
      lin.pass = tf.r2 >= 0.95 && bf.r2 >= 0.999;
    } else {
      lin.pass = false;
      lin.evidence["note"] = "not enough surviving cells";
    }
    bundle.diagnostics.push_back(lin);
  }

  bundle.provenance["axis"] = axis;
  bundle.provenance["grid"] = grid;
  Json seed_list = Json::array();
  for (uint64_t s : seeds) seed_list.push_back(s);
  bundle.provenance["seeds"] = seed_list;
  bundle.provenance["code_version"] = kCodeVersion;
  if (evidence_csv) *evidence_csv = table;
  return bundle;
}

}  // namespace mno::diag
