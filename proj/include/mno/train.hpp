#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "mno/dataset.hpp"
#include "mno/model.hpp"
#include "mno/optim.hpp"
#include "mno/tensor.hpp"

namespace mno::train {

struct LossWeights {
  double s_nll = 1.0;
  double gamma = 0.1;    // variance consistency
  double epsilon = 0.1;  // residual centering
  double delta = 0.01;   // factor regularization

  void validate() const {
    if (s_nll < 0 || gamma < 0 || epsilon < 0 || delta < 0)
      throw ConfigError("loss weights must be nonnegative");
  }
};

struct TrainConfig {
  int epochs = 120;
  int warmup_epochs = 10;
  double lr = 1e-3;
  int batch = 256;
  double clamp_lo = 1e-5;
  double clamp_hi = 1e2;
  double weight_decay = 1e-4;
  double grad_clip = 0.0;  // off unless positive
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (warmup_epochs >= std::max(epochs, 1) && epochs > 0)
      throw ConfigError("train: warmup_epochs must be smaller than epochs");
    if (clamp_lo <= 0.0 || clamp_hi <= clamp_lo) throw ConfigError("train: bad variance clamp interval");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  }
};

struct LossBreakdown {
  double nll = 0.0;
  double consistency = 0.0;
  double martingale = 0.0;
  double reg = 0.0;
  double warmup_mse = 0.0;
  double w_nll = 0.0;  // effective weights after the mean-only warmup ramp
  double w_consistency = 0.0;
  double w_martingale = 0.0;
  double w_reg = 0.0;
  double w_mse = 0.0;
  double total = 0.0;

  Json to_json() const {
    Json j;
    j["nll"] = nll;
    j["consistency"] = consistency;
    j["martingale"] = martingale;
    j["reg"] = reg;
    j["warmup_mse"] = warmup_mse;
    j["w_nll"] = w_nll;
    j["w_consistency"] = w_consistency;
    j["w_martingale"] = w_martingale;
    j["w_reg"] = w_reg;
    j["w_mse"] = w_mse;
    j["total"] = total;
    return j;
  }
};

// Mean-only warmup: a plain squared-error mean fit (weight 1) carries the
// mean head while every variance-facing weight (NLL, consistency, factor
// regularization) ramps linearly from 0 to its configured value. The
// martingale centering term addresses the mean and stays on throughout.
// After warmup the ramp is complete and the mean-fit term drops out.
struct EffectiveWeights {
  double nll = 0.0;
  double consistency = 0.0;
  double martingale = 0.0;
  double reg = 0.0;
  double mse = 0.0;
};

inline EffectiveWeights warmup_schedule(const LossWeights& w, const TrainConfig& cfg, int epoch) {
  EffectiveWeights e;
  e.martingale = w.epsilon;
  if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs) {
    double ramp = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    e.nll = w.s_nll * ramp;
    e.consistency = w.gamma * ramp;
    e.reg = w.delta * ramp;
    e.mse = 1.0;
  } else {
    e.nll = w.s_nll;
    e.consistency = w.gamma;
    e.reg = w.delta;
    e.mse = 0.0;
  }
  return e;
}

// Assembles the taped composite objective for one batch.
//   targets: [B, E, C, N] leaf (no grad), u0 as passed to the forward pass.
// Loss terms follow the moment objective: pointwise Gaussian NLL on the
// clamped variance, relative L2 variance consistency against the unbiased
// ensemble variance, squared ensemble-mean residual, and mean B^2.
inline int composite_loss_taped(Tape& tape, const op::TapedForward& fwd, int targets_id,
                                int u0_id, const LossWeights& weights, int epoch,
                                const TrainConfig& cfg, LossBreakdown* breakdown) {
  // taken by value: references into the tape go stale as ops are recorded
  const Tensor targets = tape.val(targets_id);
  if (targets.rank() != 4) throw Error("composite_loss: targets must be [B,E,C,N]");
  const int64_t B = targets.dim(0), E = targets.dim(1);
  if (E < 1) throw Error("composite_loss: empty ensemble");

  EffectiveWeights ew = warmup_schedule(weights, cfg, epoch);

  // residuals over the ensemble axis
  int mean_rep = tape.repeat_ensemble(fwd.mean, E);
  int resid = tape.sub(targets_id, mean_rep);
  int resid_sq = tape.square(resid);

  // Gaussian NLL with the variance clamped in both terms
  int v_clamped = tape.clamp(fwd.variance, cfg.clamp_lo, cfg.clamp_hi);
  int v_rep = tape.repeat_ensemble(v_clamped, E);
  int log_v = tape.log_(v_rep);
  int ratio = tape.div_floored(resid_sq, v_rep, cfg.clamp_lo * 1e-6);
  int nll = tape.mul_scalar(tape.mean_all(tape.add(log_v, ratio)), 0.5);

  // relative L2 between predicted and empirical variance, per batch item
  int consistency;
  if (E >= 2) {
    Tensor v_emp(Shape{B, targets.dim(2), targets.dim(3)});
    Tensor inv_norm(Shape{B});
    for (int64_t b = 0; b < B; ++b) {
      // unbiased per-point ensemble variance of this item
      const int64_t C = targets.dim(2), N = targets.dim(3);
      for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < N; ++x) {
          double mu = 0.0;
          for (int64_t e = 0; e < E; ++e) mu += targets.at4(b, e, c, x);
          mu /= static_cast<double>(E);
          double s = 0.0;
          for (int64_t e = 0; e < E; ++e) {
            double d = targets.at4(b, e, c, x) - mu;
            s += d * d;
          }
          v_emp.at3(b, c, x) = s / static_cast<double>(E - 1);
        }
      double norm = 0.0;
      for (int64_t c = 0; c < C; ++c)
        for (int64_t x = 0; x < N; ++x) norm += v_emp.at3(b, c, x) * v_emp.at3(b, c, x);
      inv_norm[b] = 1.0 / (std::sqrt(norm) + 1e-8);
    }
    int v_emp_id = tape.leaf(v_emp, false);
    int diff_norm = tape.sqrt_(tape.sum_per_item(tape.square(tape.sub(fwd.variance, v_emp_id))));
    int rel = tape.mul(diff_norm, tape.leaf(inv_norm, false));
    consistency = tape.mean_all(rel);
  } else {
    consistency = tape.leaf(Tensor::scalar(0.0), false);
  }

  // squared ensemble-mean residual, averaged over batch, channels, space
  int martingale = tape.mean_all(tape.square(tape.mean_ensemble(resid)));
  (void)u0_id;  // the residual above is u_T - u0 - A since mean = u0 + A

  int reg = tape.mean_all(tape.square(fwd.factor));

  // plain mean-fit term active during warmup
  int mse = tape.mean_all(resid_sq);

  int total = tape.mul_scalar(nll, ew.nll);
  total = tape.add(total, tape.mul_scalar(consistency, ew.consistency));
  total = tape.add(total, tape.mul_scalar(martingale, ew.martingale));
  total = tape.add(total, tape.mul_scalar(reg, ew.reg));
  total = tape.add(total, tape.mul_scalar(mse, ew.mse));

  if (breakdown) {
    breakdown->nll = tape.val(nll)[0];
    breakdown->consistency = tape.val(consistency)[0];
    breakdown->martingale = tape.val(martingale)[0];
    breakdown->reg = tape.val(reg)[0];
    breakdown->warmup_mse = tape.val(mse)[0];
    breakdown->w_nll = ew.nll;
    breakdown->w_consistency = ew.consistency;
    breakdown->w_martingale = ew.martingale;
    breakdown->w_reg = ew.reg;
    breakdown->w_mse = ew.mse;
    breakdown->total = tape.val(total)[0];
  }
  return total;
}

namespace train_detail {

inline Tensor targets_for(const sim::EnsembleDataset& ds, const std::vector<int64_t>& idx) {
  const int64_t E = ds.n_ens(), C = ds.channels(), N = ds.grid();
  Tensor t(Shape{static_cast<int64_t>(idx.size()), E, C, N});
  const int64_t inner = E * C * N;
  for (size_t b = 0; b < idx.size(); ++b)
    std::copy(ds.uT.data.begin() + idx[b] * inner, ds.uT.data.begin() + (idx[b] + 1) * inner,
              t.data.begin() + static_cast<int64_t>(b) * inner);
  return t;
}

inline Tensor u0_for(const sim::EnsembleDataset& ds, const std::vector<int64_t>& idx) {
  const int64_t C = ds.channels(), N = ds.grid();
  Tensor t(Shape{static_cast<int64_t>(idx.size()), C, N});
  const int64_t inner = C * N;
  for (size_t b = 0; b < idx.size(); ++b)
    std::copy(ds.u0.data.begin() + idx[b] * inner, ds.u0.data.begin() + (idx[b] + 1) * inner,
              t.data.begin() + static_cast<int64_t>(b) * inner);
  return t;
}

}  // namespace train_detail

// Spec-level loss entry points on a single prediction and its ensemble.
// These run the same taped arithmetic as training.

inline double nll_loss(const op::MomentPrediction& pred, const Tensor& targets,
                       double clamp_lo = 1e-5, double clamp_hi = 1e2) {
  if (targets.rank() != 3 || targets.dim(0) < 1) throw Error("nll_loss: targets must be [E,C,N], E >= 1");
  Tape tape;
  op::TapedForward fwd;
  Tensor mean_b(Shape{1, pred.mean.dim(0), pred.mean.dim(1)}, pred.mean.data);
  Tensor fac_b(Shape{1, pred.factor.dim(0), pred.factor.dim(1), pred.factor.dim(2)},
               pred.factor.data);
  fwd.mean = tape.leaf(mean_b, false);
  fwd.factor = tape.leaf(fac_b, false);
  fwd.variance = tape.sum_rank_axis(tape.square(fwd.factor));
  Tensor tg(Shape{1, targets.dim(0), targets.dim(1), targets.dim(2)}, targets.data);
  int targets_id = tape.leaf(tg, false);
  TrainConfig cfg;
  cfg.clamp_lo = clamp_lo;
  cfg.clamp_hi = clamp_hi;
  LossWeights w;
  w.s_nll = 1.0;
  w.gamma = w.epsilon = w.delta = 0.0;
  LossBreakdown bd;
  composite_loss_taped(tape, fwd, targets_id, fwd.mean, w, cfg.warmup_epochs, cfg, &bd);
  return bd.nll;
}

inline double consistency_loss(const op::MomentPrediction& pred, const Tensor& targets) {
  if (targets.rank() != 3) throw Error("consistency_loss: targets must be [E,C,N]");
  if (targets.dim(0) < 2) return 0.0;
  Tape tape;
  op::TapedForward fwd;
  Tensor mean_b(Shape{1, pred.mean.dim(0), pred.mean.dim(1)}, pred.mean.data);
  Tensor fac_b(Shape{1, pred.factor.dim(0), pred.factor.dim(1), pred.factor.dim(2)},
               pred.factor.data);
  fwd.mean = tape.leaf(mean_b, false);
  fwd.factor = tape.leaf(fac_b, false);
  fwd.variance = tape.sum_rank_axis(tape.square(fwd.factor));
  Tensor tg(Shape{1, targets.dim(0), targets.dim(1), targets.dim(2)}, targets.data);
  int targets_id = tape.leaf(tg, false);
  TrainConfig cfg;
  LossWeights w;
  LossBreakdown bd;
  composite_loss_taped(tape, fwd, targets_id, fwd.mean, w, cfg.warmup_epochs, cfg, &bd);
  return bd.consistency;
}

inline double martingale_loss(const op::MomentPrediction& pred, const Tensor& u0,
                              const Tensor& targets) {
  if (targets.rank() != 3 || targets.dim(0) < 1) throw Error("martingale_loss: targets must be [E,C,N]");
  (void)u0;  // pred.mean already carries u0 + A
  Tape tape;
  op::TapedForward fwd;
  Tensor mean_b(Shape{1, pred.mean.dim(0), pred.mean.dim(1)}, pred.mean.data);
  Tensor fac_b(Shape{1, pred.factor.dim(0), pred.factor.dim(1), pred.factor.dim(2)},
               pred.factor.data);
  fwd.mean = tape.leaf(mean_b, false);
  fwd.factor = tape.leaf(fac_b, false);
  fwd.variance = tape.sum_rank_axis(tape.square(fwd.factor));
  Tensor tg(Shape{1, targets.dim(0), targets.dim(1), targets.dim(2)}, targets.data);
  int targets_id = tape.leaf(tg, false);
  TrainConfig cfg;
  LossWeights w;
  LossBreakdown bd;
  composite_loss_taped(tape, fwd, targets_id, fwd.mean, w, cfg.warmup_epochs, cfg, &bd);
  return bd.martingale;
}

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double wall_ms = 0.0;
  double lr = 0.0;

  Json to_json() const {
    Json j;
    j["epoch"] = epoch;
    j["loss"] = loss.to_json();
    j["wall_ms"] = wall_ms;
    j["lr"] = lr;
    return j;
  }
};

struct TrainResult {
  op::MnoModel model;
  std::vector<EpochRecord> log;
  AdamWState optimizer;
  bool diverged = false;
  std::string divergence_message;
};

// Full fit loop: seed-derived batch shuffling, AdamW updates, per-epoch loss
// breakdown. Deterministic given (dataset, config, weights, seed). On
// divergence the last finished epoch's parameters are returned.
inline TrainResult fit(op::MnoModel model, const sim::EnsembleDataset& ds, const TrainConfig& cfg,
                       const LossWeights& weights, AdamWState* resume_state = nullptr) {
  cfg.validate();
  weights.validate();
  if (!ds.normalized) throw Error("fit: dataset must be normalized first");
  ds.validate();
  if (model.cfg.channels != ds.channels()) throw Error("fit: model/dataset channel mismatch");

  TrainResult res;
  res.optimizer.lr = cfg.lr;
  res.optimizer.beta1 = cfg.beta1;
  res.optimizer.beta2 = cfg.beta2;
  res.optimizer.eps = cfg.adam_eps;
  res.optimizer.weight_decay = cfg.weight_decay;
  if (resume_state) res.optimizer = *resume_state;

  const int64_t n_ic = ds.n_ic();
  const double t_query = ds.horizon;
  ParamSet last_good = model.params;
  AdamWState last_good_opt = res.optimizer;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto tic = std::chrono::steady_clock::now();
    std::vector<int64_t> perm(static_cast<size_t>(n_ic));
    for (int64_t i = 0; i < n_ic; ++i) perm[static_cast<size_t>(i)] = i;
    RngStream shuffle_rng = make_stream(cfg.seed, static_cast<uint64_t>(epoch), 0x5f7ULL);
    for (int64_t i = n_ic - 1; i > 0; --i) {
      int64_t j = static_cast<int64_t>(shuffle_rng.next_u64() % static_cast<uint64_t>(i + 1));
      std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }

    LossBreakdown epoch_loss;
    int n_batches = 0;
    for (int64_t start = 0; start < n_ic; start += cfg.batch) {
      std::vector<int64_t> idx(perm.begin() + start,
                               perm.begin() + std::min<int64_t>(start + cfg.batch, n_ic));
      Tensor u0 = train_detail::u0_for(ds, idx);
      Tensor targets = train_detail::targets_for(ds, idx);

      Tape tape;
      op::ParamNodes ids = op::register_params(tape, model.params, true);
      op::TapedForward fwd = op::mno_forward_taped(tape, model, ids, u0, t_query);
      int targets_id = tape.leaf(targets, false);
      LossBreakdown bd;
      int loss = composite_loss_taped(tape, fwd, targets_id, -1, weights, epoch, cfg, &bd);

      double loss_val = tape.val(loss)[0];
      if (!std::isfinite(loss_val) || loss_val > 1e8) {
        res.model = model;
        res.model.params = last_good;
        res.optimizer = last_good_opt;
        res.diverged = true;
        res.divergence_message = "training diverged at epoch " + std::to_string(epoch) +
                                 " (loss = " + std::to_string(loss_val) + ")";
        return res;
      }

      tape.backward(loss);
      GradMap grads;
      for (const auto& [name, id] : ids) grads.emplace(name, tape.grad(id));
      if (cfg.grad_clip > 0.0) clip_grad_norm(grads, cfg.grad_clip);
      adamw_step(res.optimizer, model.params, grads);

      epoch_loss.nll += bd.nll;
      epoch_loss.consistency += bd.consistency;
      epoch_loss.martingale += bd.martingale;
      epoch_loss.reg += bd.reg;
      epoch_loss.warmup_mse += bd.warmup_mse;
      epoch_loss.w_nll = bd.w_nll;
      epoch_loss.w_consistency = bd.w_consistency;
      epoch_loss.w_martingale = bd.w_martingale;
      epoch_loss.w_reg = bd.w_reg;
      epoch_loss.w_mse = bd.w_mse;
      epoch_loss.total += bd.total;
      ++n_batches;
    }
    double inv = 1.0 / std::max(1, n_batches);
    epoch_loss.nll *= inv;
    epoch_loss.consistency *= inv;
    epoch_loss.martingale *= inv;
    epoch_loss.reg *= inv;
    epoch_loss.warmup_mse *= inv;
    epoch_loss.total *= inv;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss;
    rec.lr = cfg.lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tic).count();
    res.log.push_back(rec);
    last_good = model.params;
    last_good_opt = res.optimizer;
  }

  res.model = std::move(model);
  return res;
}

}  // namespace mno::train
