#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mno/fft.hpp"
#include "mno/optim.hpp"
#include "mno/stochsim.hpp"
#include "mno/train.hpp"

using namespace mno;
using namespace mno::op;
using namespace mno::train;

namespace {

ModelConfig tiny_config(int channels = 1) {
  ModelConfig cfg;
  cfg.fno.width = 8;
  cfg.fno.modes = 4;
  cfg.fno.layers = 2;
  cfg.rank = 4;
  cfg.channels = channels;
  cfg.t_scale = 0.5;
  return cfg;
}

// prediction with a prescribed mean and variance field
MomentPrediction fixed_pred(const Tensor& mean, const Tensor& var) {
  MomentPrediction p;
  p.mean = mean;
  p.factor = Tensor(Shape{1, var.dim(0), var.dim(1)});
  for (int64_t i = 0; i < var.numel(); ++i) p.factor[i] = std::sqrt(var[i]);
  p.gate = 1.0;
  return p;
}

}  // namespace

TEST_CASE("gaussian likelihood hits its closed forms") {
  Tensor mean(Shape{1, 8});
  Tensor ones(Shape{1, 8}, 1.0);

  // unit variance, zero residual
  Tensor targets(Shape{3, 1, 8});
  REQUIRE(nll_loss(fixed_pred(mean, ones), targets) == Catch::Approx(0.0).margin(1e-14));

  // unit variance, unit residual
  Tensor targets1(Shape{3, 1, 8}, 1.0);
  REQUIRE(nll_loss(fixed_pred(mean, ones), targets1) == Catch::Approx(0.5).epsilon(1e-12));

  // a tiny raw variance acts as the clamp floor in both terms
  Tensor tiny_var(Shape{1, 8}, 1e-9);
  Tensor targets2(Shape{2, 1, 8}, 0.3);
  double expect = 0.5 * (std::log(1e-5) + 0.09 / 1e-5);
  REQUIRE(nll_loss(fixed_pred(mean, tiny_var), targets2) == Catch::Approx(expect).epsilon(1e-12));

  Tensor no_members(Shape{0, 1, 8});
  REQUIRE_THROWS_AS(nll_loss(fixed_pred(mean, ones), no_members), Error);
}

TEST_CASE("consistency term is the relative L2 variance error") {
  RngStream rng = make_stream(2);
  const int64_t E = 64, N = 8;
  Tensor targets(Shape{E, 1, N});
  for (auto& v : targets.data) v = rng.gauss();

  // empirical per-point variance, unbiased
  Tensor v_emp(Shape{1, N});
  for (int64_t x = 0; x < N; ++x) {
    double mu = 0;
    for (int64_t e = 0; e < E; ++e) mu += targets.at3(e, 0, x);
    mu /= E;
    double s = 0;
    for (int64_t e = 0; e < E; ++e) {
      double d = targets.at3(e, 0, x) - mu;
      s += d * d;
    }
    v_emp.at2(0, x) = s / (E - 1);
  }
  Tensor mean(Shape{1, N});

  // exact variance match
  REQUIRE(consistency_loss(fixed_pred(mean, v_emp), targets) == Catch::Approx(0.0).margin(1e-9));

  // uniform factor-of-two mismatch has relative error ~ 1
  Tensor v2 = v_emp * 2.0;
  double got = consistency_loss(fixed_pred(mean, v2), targets);
  REQUIRE(got == Catch::Approx(1.0).epsilon(1e-6));

  // independent re-implementation on random prediction fields
  Tensor v_pred(Shape{1, N});
  for (auto& v : v_pred.data) v = 0.5 + std::abs(rng.gauss());
  double num = 0, den = 0;
  for (int64_t x = 0; x < N; ++x) {
    double d = v_pred.at2(0, x) - v_emp.at2(0, x);
    num += d * d;
    den += v_emp.at2(0, x) * v_emp.at2(0, x);
  }
  double oracle = std::sqrt(num) / (std::sqrt(den) + 1e-8);
  REQUIRE(consistency_loss(fixed_pred(mean, v_pred), targets) == Catch::Approx(oracle).margin(1e-12));

  // single-member ensembles contribute exactly zero
  Tensor single(Shape{1, 1, N}, 0.7);
  REQUIRE(consistency_loss(fixed_pred(mean, v_pred), single) == 0.0);
}

TEST_CASE("martingale term sees only the ensemble-mean residual") {
  const int64_t N = 6;
  RngStream rng = make_stream(3);
  Tensor mean(Shape{1, N});
  for (auto& v : mean.data) v = rng.gauss();
  Tensor var(Shape{1, N}, 1.0);
  MomentPrediction pred = fixed_pred(mean, var);
  Tensor u0(Shape{1, N});

  // all members equal the predicted mean
  Tensor t_eq(Shape{4, 1, N});
  for (int64_t e = 0; e < 4; ++e)
    for (int64_t x = 0; x < N; ++x) t_eq.at3(e, 0, x) = mean.at2(0, x);
  REQUIRE(martingale_loss(pred, u0, t_eq) == Catch::Approx(0.0).margin(1e-14));

  // symmetric spread stays centered
  Tensor t_sym(Shape{2, 1, N});
  for (int64_t x = 0; x < N; ++x) {
    t_sym.at3(0, 0, x) = mean.at2(0, x) + 0.9;
    t_sym.at3(1, 0, x) = mean.at2(0, x) - 0.9;
  }
  REQUIRE(martingale_loss(pred, u0, t_sym) == Catch::Approx(0.0).margin(1e-14));

  // constant offset c shows up as c^2
  Tensor t_off(Shape{3, 1, N});
  for (int64_t e = 0; e < 3; ++e)
    for (int64_t x = 0; x < N; ++x) t_off.at3(e, 0, x) = mean.at2(0, x) + 0.4;
  REQUIRE(martingale_loss(pred, u0, t_off) == Catch::Approx(0.16).epsilon(1e-12));
}

TEST_CASE("composite loss is exactly the weighted sum of its breakdown") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset raw = sim::synth_head_separation(sim::SynthCase::DriftNoise, sspec, 8, 8, 5);
  sim::EnsembleDataset ds = sim::normalize_dataset(raw);

  ModelConfig mc = tiny_config();
  MnoModel model = init_mno(mc, 3);
  TrainConfig cfg;
  LossWeights w;

  for (int epoch : {0, 5, 20}) {
    Tape tape;
    ParamNodes ids = register_params(tape, model.params, true);
    Tensor u0 = train_detail::u0_for(ds, {0, 1, 2, 3});
    Tensor targets = train_detail::targets_for(ds, {0, 1, 2, 3});
    TapedForward fwd = mno_forward_taped(tape, model, ids, u0, ds.horizon);
    int tid = tape.leaf(targets, false);
    LossBreakdown bd;
    int loss = composite_loss_taped(tape, fwd, tid, -1, w, epoch, cfg, &bd);
    double reconstructed = bd.w_nll * bd.nll + bd.w_consistency * bd.consistency +
                           bd.w_martingale * bd.martingale + bd.w_reg * bd.reg +
                           bd.w_mse * bd.warmup_mse;
    REQUIRE(tape.val(loss)[0] == Catch::Approx(reconstructed).margin(1e-12));
    if (epoch < cfg.warmup_epochs) {
      REQUIRE(bd.w_mse == 1.0);
      REQUIRE(bd.w_nll == Catch::Approx(w.s_nll * epoch / cfg.warmup_epochs));
    } else {
      REQUIRE(bd.w_mse == 0.0);
      REQUIRE(bd.w_nll == w.s_nll);
    }
  }
}

TEST_CASE("with weights (1,0,0,0) past warmup the composite equals the likelihood") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset ds =
      sim::normalize_dataset(sim::synth_head_separation(sim::SynthCase::PureNoise, sspec, 4, 8, 6));
  MnoModel model = init_mno(tiny_config(), 9);
  TrainConfig cfg;
  LossWeights w;
  w.gamma = w.epsilon = w.delta = 0.0;

  Tape tape;
  ParamNodes ids = register_params(tape, model.params, true);
  Tensor u0 = train_detail::u0_for(ds, {0, 1});
  Tensor targets = train_detail::targets_for(ds, {0, 1});
  TapedForward fwd = mno_forward_taped(tape, model, ids, u0, ds.horizon);
  LossBreakdown bd;
  int loss = composite_loss_taped(tape, fwd, tape.leaf(targets, false), -1, w, 50, cfg, &bd);
  REQUIRE(tape.val(loss)[0] == Catch::Approx(bd.nll).margin(1e-12));
}

TEST_CASE("full composite gradient survives a finite-difference audit") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset ds = sim::normalize_dataset(
      sim::synth_head_separation(sim::SynthCase::DriftNoise, sspec, 4, 4, 8));
  MnoModel model = init_mno(tiny_config(), 21);
  TrainConfig cfg;
  LossWeights w;
  const int epoch = 30;

  Tensor u0 = train_detail::u0_for(ds, {0, 1, 2, 3});
  Tensor targets = train_detail::targets_for(ds, {0, 1, 2, 3});

  auto loss_of = [&]() {
    Tape tape;
    ParamNodes ids = register_params(tape, model.params, false);
    TapedForward fwd = mno_forward_taped(tape, model, ids, u0, ds.horizon);
    LossBreakdown bd;
    composite_loss_taped(tape, fwd, tape.leaf(targets, false), -1, w, epoch, cfg, &bd);
    return bd.total;
  };

  Tape tape;
  ParamNodes ids = register_params(tape, model.params, true);
  TapedForward fwd = mno_forward_taped(tape, model, ids, u0, ds.horizon);
  LossBreakdown bd;
  int loss = composite_loss_taped(tape, fwd, tape.leaf(targets, false), -1, w, epoch, cfg, &bd);
  tape.backward(loss);
  GradMap grads;
  for (const auto& [name, id] : ids) grads.emplace(name, tape.grad(id));

  double err = grad_check(loss_of, model.params, grads, 60, 1e-5, 4);
  REQUIRE(err < 1e-4);
}

TEST_CASE("zero epochs returns the model unchanged") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset ds =
      sim::normalize_dataset(sim::synth_head_separation(sim::SynthCase::PureNoise, sspec, 4, 8, 2));
  MnoModel model = init_mno(tiny_config(), 31);
  ParamSet before = model.params;
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.warmup_epochs = 0;
  TrainResult res = fit(std::move(model), ds, cfg, LossWeights{});
  for (const auto& [name, t] : before.items) REQUIRE(res.model.params.get(name).data == t.data);
  REQUIRE(res.log.empty());
}

TEST_CASE("training renormalizes losses downward on a smoke run") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    sim::EnsembleDataset ds = sim::normalize_dataset(
        sim::synth_head_separation(sim::SynthCase::DriftNoise, sspec, 24, 16, seed));
    ModelConfig mc = tiny_config();
    MnoModel model = init_mno(mc, seed);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.warmup_epochs = 5;
    cfg.batch = 8;
    cfg.seed = seed;
    TrainResult res = fit(std::move(model), ds, cfg, LossWeights{});
    REQUIRE_FALSE(res.diverged);
    REQUIRE(res.log.size() == 40);

    auto median_of = [&](size_t lo, size_t hi) {
      std::vector<double> v;
      for (size_t i = lo; i < hi; ++i) v.push_back(res.log[i].loss.total);
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    // compare on the post-warmup objective only
    REQUIRE(median_of(30, 40) < median_of(10, 20));
  }
}

TEST_CASE("training works with single-member ensembles") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset ds =
      sim::normalize_dataset(sim::synth_head_separation(sim::SynthCase::DriftNoise, sspec, 8, 1, 3));
  MnoModel model = init_mno(tiny_config(), 7);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch = 4;
  TrainResult res = fit(std::move(model), ds, cfg, LossWeights{});
  REQUIRE_FALSE(res.diverged);
  for (const auto& rec : res.log) REQUIRE(rec.loss.consistency == 0.0);
}

TEST_CASE("a diverging run reports itself and keeps the last good state") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset ds =
      sim::normalize_dataset(sim::synth_head_separation(sim::SynthCase::PureNoise, sspec, 8, 4, 4));
  MnoModel model = init_mno(tiny_config(), 11);
  ParamSet init = model.params;
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.warmup_epochs = 1;
  cfg.batch = 8;
  cfg.lr = 1e12;  // guaranteed explosion
  TrainResult res = fit(std::move(model), ds, cfg, LossWeights{});
  REQUIRE(res.diverged);
  REQUIRE_FALSE(res.divergence_message.empty());
}

TEST_CASE("optimizer state carries across resumed fits") {
  sim::SynthSpec sspec;
  sspec.grid = 16;
  sim::EnsembleDataset ds = sim::normalize_dataset(
      sim::synth_head_separation(sim::SynthCase::DriftNoise, sspec, 8, 8, 5));
  MnoModel model = init_mno(tiny_config(), 13);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch = 8;
  TrainResult first = fit(std::move(model), ds, cfg, LossWeights{});
  int64_t steps_after_first = first.optimizer.step;
  REQUIRE(steps_after_first > 0);
  TrainResult second = fit(std::move(first.model), ds, cfg, LossWeights{}, &first.optimizer);
  REQUIRE(second.optimizer.step == 2 * steps_after_first);
}

TEST_CASE("one model transfers across grids with stable low modes") {
  // train briefly at N = 32, then evaluate the same weights at 32 and 64
  sim::SpdeSpec spec;
  spec.equation = sim::Equation::Burgers;
  spec.grid = 32;
  spec.horizon = 0.2;
  sim::EnsembleDataset raw = sim::simulate_spde_ensemble(spec, 24, 8, 6);
  sim::NormStats stats;
  sim::EnsembleDataset ds = sim::normalize_dataset(raw, &stats);

  ModelConfig mc = tiny_config();
  mc.t_scale = spec.horizon;
  MnoModel model = init_mno(mc, 15);
  model.norm = stats;
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.warmup_epochs = 5;
  cfg.batch = 8;
  TrainResult res = fit(std::move(model), ds, cfg, LossWeights{});
  REQUIRE_FALSE(res.diverged);

  // the same continuum initial condition sampled on both grids
  std::vector<double> coarse = sim::sample_u0(spec, 777, 0, 32);
  std::vector<double> fine = sim::sample_u0(spec, 777, 0, 64);
  auto normalize = [&](std::vector<double> v) {
    for (auto& x : v) x = (x - stats.mean[0]) / stats.std_dev[0];
    return v;
  };
  coarse = normalize(coarse);
  fine = normalize(fine);

  MomentPrediction p32 = mno_forward(res.model, Tensor(Shape{1, 32}, coarse), spec.horizon);
  MomentPrediction p64 = mno_forward(res.model, Tensor(Shape{1, 64}, fine), spec.horizon);
  REQUIRE(all_finite(p64.mean));

  std::vector<double> m32(p32.mean.data.begin(), p32.mean.data.end());
  std::vector<double> m64(p64.mean.data.begin(), p64.mean.data.end());
  ComplexSpectrum s32 = fft_forward(m32);
  ComplexSpectrum s64 = fft_forward(m64);
  // normalized per-mode energy on the shared low modes
  double total = 0.0;
  std::vector<double> e32(4), e64(4);
  for (int k = 0; k < 4; ++k) {
    e32[k] = std::norm(s32.modes[k] / 32.0);
    e64[k] = std::norm(s64.modes[k] / 64.0);
    total += std::max(e32[k], e64[k]);
  }
  for (int k = 0; k < 4; ++k) {
    double scale = std::max(e32[k], e64[k]);
    if (scale < 1e-3 * total) continue;  // spectrally empty mode
    REQUIRE(std::abs(e32[k] - e64[k]) / scale < 0.10);
  }
}
