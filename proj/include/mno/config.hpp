#pragma once

#include <set>
#include <string>
#include <vector>

#include "mno/diagnostics.hpp"
#include "mno/evaluate.hpp"
#include "mno/fbm.hpp"
#include "mno/model.hpp"
#include "mno/serialize.hpp"
#include "mno/stochsim.hpp"
#include "mno/train.hpp"

namespace mno::cli {

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError("config section '" + ctx + "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + ctx);
}

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

struct DataSizes {
  int64_t n_ic = 64;
  int64_t n_ens = 32;
  int64_t n_ic_test = 32;
};

struct MetricOptions {
  std::vector<std::string> names = {"mean_rmse", "variance_rmse", "empirical_w2", "timing"};
  int64_t w2_samples = 256;
  double exceedance_threshold = 2.0;
};

struct AblationOptions {
  std::vector<std::string> grid;
  int n_seeds = 3;
};

// One resolved run description. Profile defaults land first, JSON overrides
// second, CLI flags last; the fully resolved form is written next to every
// command's outputs.
struct RunConfig {
  std::string profile = "desk";
  std::string task = "burgers";
  uint64_t seed = 42;
  sim::SpdeSpec spde;
  sim::LogVolSpec logvol;
  sim::SynthSpec synth;
  DataSizes data;
  op::ModelConfig model;
  train::TrainConfig train_cfg;
  train::LossWeights weights;
  MetricOptions metrics;
  AblationOptions ablation;

  bool is_spde_task() const { return task == "burgers" || task == "phi4" || task == "ou"; }
  bool is_logvol_task() const { return task == "logvol"; }
  bool is_synth_task() const {
    return task == "synth_a" || task == "synth_b" || task == "synth_c";
  }

  double task_horizon() const {
    if (is_spde_task()) return spde.horizon;
    if (is_logvol_task()) return logvol.fbm.horizon;
    return synth.horizon;
  }

  Json to_json() const {
    Json j;
    j["profile"] = profile;
    j["task"] = task;
    j["seed"] = seed;
    j["spde"] = spde.to_json();
    Json lv = logvol.to_json();
    j["logvol"] = lv;
    Json sy;
    sy["grid"] = synth.grid;
    sy["drift_amp"] = synth.drift_amp;
    sy["noise_var"] = synth.noise_var;
    sy["u0_amp"] = synth.u0_amp;
    sy["u0_modes"] = synth.u0_modes;
    sy["horizon"] = synth.horizon;
    j["synth"] = sy;
    Json d;
    d["n_ic"] = data.n_ic;
    d["n_ens"] = data.n_ens;
    d["n_ic_test"] = data.n_ic_test;
    j["data"] = d;
    j["model"] = model.to_json();
    Json t;
    t["epochs"] = train_cfg.epochs;
    t["warmup_epochs"] = train_cfg.warmup_epochs;
    t["lr"] = train_cfg.lr;
    t["batch"] = train_cfg.batch;
    t["clamp_lo"] = train_cfg.clamp_lo;
    t["clamp_hi"] = train_cfg.clamp_hi;
    t["weight_decay"] = train_cfg.weight_decay;
    t["grad_clip"] = train_cfg.grad_clip;
    j["train"] = t;
    Json w;
    w["s_nll"] = weights.s_nll;
    w["gamma"] = weights.gamma;
    w["epsilon"] = weights.epsilon;
    w["delta"] = weights.delta;
    j["loss"] = w;
    Json m;
    m["names"] = metrics.names;
    m["w2_samples"] = metrics.w2_samples;
    m["exceedance_threshold"] = metrics.exceedance_threshold;
    j["metrics"] = m;
    Json a;
    a["grid"] = ablation.grid;
    a["n_seeds"] = ablation.n_seeds;
    j["ablation"] = a;
    return j;
  }
};

namespace cfg_detail {

inline void apply_profile(RunConfig& c) {
  if (c.profile == "paper") {
    c.model.fno.width = 48;
    c.model.fno.modes = 16;
    c.model.fno.layers = 4;
    c.model.rank = 16;
    c.train_cfg.epochs = 120;
    c.train_cfg.warmup_epochs = 10;
    c.train_cfg.lr = 1e-3;
    c.train_cfg.batch = 256;
    c.data.n_ic = 1000;
    c.data.n_ic_test = 200;
    c.data.n_ens = 192;
  } else if (c.profile == "desk") {
    c.model.fno.width = 12;
    c.model.fno.modes = 6;
    c.model.fno.layers = 2;
    c.model.rank = 4;
    c.train_cfg.epochs = 120;
    c.train_cfg.warmup_epochs = 10;
    c.train_cfg.lr = 1e-3;
    c.train_cfg.batch = 16;
    c.data.n_ic = 64;
    c.data.n_ic_test = 32;
    c.data.n_ens = 32;
  } else {
    throw ConfigError("unknown profile '" + c.profile + "' (expected desk|paper)");
  }
  // task-level data defaults
  if (c.task == "burgers") {
    c.spde.equation = sim::Equation::Burgers;
    c.spde.nu = 0.01;
    c.spde.sigma = 0.05;
    if (c.profile == "desk") c.spde.grid = 32;
  } else if (c.task == "phi4") {
    c.spde.equation = sim::Equation::Phi4;
    c.spde.nu = 1.0;
    c.spde.sigma = 0.2;
    if (c.profile == "desk") c.spde.grid = 32;
  } else if (c.task == "ou") {
    c.spde.equation = sim::Equation::Ou;
    c.spde.sigma = 0.05;
    if (c.profile == "desk") c.spde.grid = 32;
  } else if (c.task == "logvol") {
    if (c.profile == "desk") {
      c.logvol.fbm.n_t = 64;
      c.data.n_ic = 48;
      c.data.n_ens = 64;
      c.data.n_ic_test = 24;
      c.model.fno.modes = 8;
      c.train_cfg.epochs = 150;
    }
    c.logvol.fbm.horizon = 0.5;
  } else if (c.is_synth_task()) {
    if (c.profile == "desk") {
      c.data.n_ic = 48;
      c.data.n_ens = 256;
      c.data.n_ic_test = 24;
      c.train_cfg.epochs = 150;
    }
  } else {
    throw ConfigError("unknown task '" + c.task +
                      "' (expected burgers|phi4|ou|logvol|synth_a|synth_b|synth_c)");
  }
}

inline void parse_spde(const Json& j, sim::SpdeSpec& s) {
  check_keys(j, {"equation", "nu", "mass", "quartic", "ou_rate", "sigma", "length", "grid",
                 "horizon", "dt", "c_stab", "u0_modes", "u0_amp"},
             "spde");
  if (j.contains("equation")) s.equation = sim::equation_from_name(j.at("equation").get<std::string>());
  maybe(j, "nu", s.nu);
  maybe(j, "mass", s.mass);
  maybe(j, "quartic", s.quartic);
  maybe(j, "ou_rate", s.ou_rate);
  maybe(j, "sigma", s.sigma);
  maybe(j, "length", s.length);
  maybe(j, "grid", s.grid);
  maybe(j, "horizon", s.horizon);
  maybe(j, "dt", s.dt);
  maybe(j, "c_stab", s.c_stab);
  maybe(j, "u0_modes", s.u0_modes);
  maybe(j, "u0_amp", s.u0_amp);
}

inline void parse_logvol(const Json& j, sim::LogVolSpec& s) {
  check_keys(j, {"hurst", "eta", "n_t", "horizon", "logsig0_std"}, "logvol");
  maybe(j, "hurst", s.fbm.hurst);
  maybe(j, "eta", s.fbm.eta);
  maybe(j, "n_t", s.fbm.n_t);
  maybe(j, "horizon", s.fbm.horizon);
  maybe(j, "logsig0_std", s.logsig0_std);
}

inline void parse_synth(const Json& j, sim::SynthSpec& s) {
  check_keys(j, {"grid", "drift_amp", "noise_var", "u0_amp", "u0_modes", "horizon"}, "synth");
  maybe(j, "grid", s.grid);
  maybe(j, "drift_amp", s.drift_amp);
  maybe(j, "noise_var", s.noise_var);
  maybe(j, "u0_amp", s.u0_amp);
  maybe(j, "u0_modes", s.u0_modes);
  maybe(j, "horizon", s.horizon);
}

inline void parse_model(const Json& j, op::ModelConfig& m) {
  check_keys(j, {"width", "modes", "layers", "activation", "rank", "channels", "shared_backbone",
                 "gate_alpha_init", "factor_init_std", "t_scale"},
             "model");
  maybe(j, "width", m.fno.width);
  maybe(j, "modes", m.fno.modes);
  maybe(j, "layers", m.fno.layers);
  maybe(j, "activation", m.fno.activation);
  maybe(j, "rank", m.rank);
  maybe(j, "channels", m.channels);
  maybe(j, "shared_backbone", m.shared_backbone);
  maybe(j, "gate_alpha_init", m.gate_alpha_init);
  maybe(j, "factor_init_std", m.factor_init_std);
  maybe(j, "t_scale", m.t_scale);
}

inline void parse_train(const Json& j, train::TrainConfig& t) {
  check_keys(j, {"epochs", "warmup_epochs", "lr", "batch", "clamp_lo", "clamp_hi", "weight_decay",
                 "grad_clip"},
             "train");
  maybe(j, "epochs", t.epochs);
  maybe(j, "warmup_epochs", t.warmup_epochs);
  maybe(j, "lr", t.lr);
  maybe(j, "batch", t.batch);
  maybe(j, "clamp_lo", t.clamp_lo);
  maybe(j, "clamp_hi", t.clamp_hi);
  maybe(j, "weight_decay", t.weight_decay);
  maybe(j, "grad_clip", t.grad_clip);
}

}  // namespace cfg_detail

inline RunConfig parse_config(const Json& j) {
  check_keys(j, {"profile", "task", "seed", "spde", "logvol", "synth", "data", "model", "train",
                 "loss", "metrics", "ablation"},
             "config");
  RunConfig c;
  maybe(j, "profile", c.profile);
  maybe(j, "task", c.task);
  cfg_detail::apply_profile(c);
  maybe(j, "seed", c.seed);
  if (j.contains("spde")) cfg_detail::parse_spde(j.at("spde"), c.spde);
  if (j.contains("logvol")) cfg_detail::parse_logvol(j.at("logvol"), c.logvol);
  if (j.contains("synth")) cfg_detail::parse_synth(j.at("synth"), c.synth);
  if (j.contains("data")) {
    check_keys(j.at("data"), {"n_ic", "n_ens", "n_ic_test"}, "data");
    maybe(j.at("data"), "n_ic", c.data.n_ic);
    maybe(j.at("data"), "n_ens", c.data.n_ens);
    maybe(j.at("data"), "n_ic_test", c.data.n_ic_test);
  }
  if (j.contains("model")) cfg_detail::parse_model(j.at("model"), c.model);
  if (j.contains("train")) cfg_detail::parse_train(j.at("train"), c.train_cfg);
  if (j.contains("loss")) {
    check_keys(j.at("loss"), {"s_nll", "gamma", "epsilon", "delta"}, "loss");
    maybe(j.at("loss"), "s_nll", c.weights.s_nll);
    maybe(j.at("loss"), "gamma", c.weights.gamma);
    maybe(j.at("loss"), "epsilon", c.weights.epsilon);
    maybe(j.at("loss"), "delta", c.weights.delta);
  }
  if (j.contains("metrics")) {
    check_keys(j.at("metrics"), {"names", "w2_samples", "exceedance_threshold"}, "metrics");
    maybe(j.at("metrics"), "names", c.metrics.names);
    maybe(j.at("metrics"), "w2_samples", c.metrics.w2_samples);
    maybe(j.at("metrics"), "exceedance_threshold", c.metrics.exceedance_threshold);
  }
  if (j.contains("ablation")) {
    check_keys(j.at("ablation"), {"grid", "n_seeds"}, "ablation");
    maybe(j.at("ablation"), "grid", c.ablation.grid);
    maybe(j.at("ablation"), "n_seeds", c.ablation.n_seeds);
  }
  c.model.validate();
  c.train_cfg.validate();
  c.weights.validate();
  c.model.t_scale = c.task_horizon();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// Dataset generation for whatever task the config names.
inline sim::EnsembleDataset generate_dataset(const RunConfig& c, int64_t n_ic, int64_t n_ens,
                                             uint64_t seed) {
  if (c.is_spde_task()) return sim::simulate_spde_ensemble(c.spde, n_ic, n_ens, seed);
  if (c.is_logvol_task()) return sim::simulate_logvol_ensemble(c.logvol, n_ic, n_ens, seed);
  if (c.task == "synth_a")
    return sim::synth_head_separation(sim::SynthCase::PureDrift, c.synth, n_ic, n_ens, seed);
  if (c.task == "synth_b")
    return sim::synth_head_separation(sim::SynthCase::PureNoise, c.synth, n_ic, n_ens, seed);
  if (c.task == "synth_c")
    return sim::synth_head_separation(sim::SynthCase::DriftNoise, c.synth, n_ic, n_ens, seed);
  throw ConfigError("unknown task: " + c.task);
}

}  // namespace mno::cli
