// Command-line surface: dataset generation, training, evaluation,
// diagnostics, and ablations over the moment-predicting operator.
//
// Exit codes: 0 success (and diagnostic pass), 1 usage or config error,
// 2 numeric failure, 3 diagnostic verdict failed.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mno/config.hpp"
#include "mno/diagnostics.hpp"
#include "mno/evaluate.hpp"
#include "mno/fbm.hpp"
#include "mno/model.hpp"
#include "mno/report.hpp"
#include "mno/stochsim.hpp"
#include "mno/train.hpp"

namespace fs = std::filesystem;
using namespace mno;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "mno_out";
  bool force = false;
  bool has_seed = false;
  uint64_t seed = 0;
};

cli::RunConfig resolve_config(const CommonArgs& args) {
  cli::RunConfig cfg;
  if (!args.config_path.empty())
    cfg = cli::load_config(args.config_path);
  else
    cfg = cli::parse_config(Json::object());
  if (args.has_seed) cfg.seed = args.seed;
  return cfg;
}

void write_resolved(const cli::RunConfig& cfg, const fs::path& out) {
  write_json_file(cfg.to_json(), out / "resolved_config.json", true);
}

int cmd_generate(const CommonArgs& args) {
  cli::RunConfig cfg = resolve_config(args);
  fs::path out(args.out_dir);
  fs::create_directories(out);
  fs::path ds_path = out / (cfg.task + ".mnods");
  sim::EnsembleDataset ds = cli::generate_dataset(cfg, cfg.data.n_ic, cfg.data.n_ens, cfg.seed);
  sim::save_dataset(ds, ds_path, args.force);
  write_resolved(cfg, out);
  std::cout << "dataset " << ds_path.string() << " hash " << hash_file(ds_path) << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path, const std::string& resume_path) {
  cli::RunConfig cfg = resolve_config(args);
  fs::path out(args.out_dir);
  fs::create_directories(out);
  sim::EnsembleDataset raw = sim::load_dataset(data_path);
  if (raw.normalized) throw ConfigError("train expects a raw (unnormalized) dataset");

  sim::NormStats stats;
  sim::EnsembleDataset ds = sim::normalize_dataset(raw, &stats);
  cfg.model.channels = static_cast<int>(ds.channels());
  cfg.model.t_scale = ds.horizon;
  if (cfg.model.fno.modes > ds.grid() / 2 + 1)
    throw ConfigError("model modes " + std::to_string(cfg.model.fno.modes) +
                      " exceed the dataset grid capacity " + std::to_string(ds.grid() / 2 + 1));

  op::MnoModel model;
  AdamWState* resume = nullptr;
  AdamWState resume_state;
  if (!resume_path.empty()) {
    op::Checkpoint ck = op::load_checkpoint(resume_path);
    model = std::move(ck.model);
    if (ck.has_optimizer) {
      resume_state.lr = cfg.train_cfg.lr;
      resume_state.beta1 = cfg.train_cfg.beta1;
      resume_state.beta2 = cfg.train_cfg.beta2;
      resume_state.eps = cfg.train_cfg.adam_eps;
      resume_state.weight_decay = cfg.train_cfg.weight_decay;
      resume_state.step = ck.opt_step;
      resume_state.moments = std::move(ck.opt_moments);
      resume = &resume_state;
    }
  } else {
    model = op::init_mno(cfg.model, cfg.seed);
    model.norm = stats;
  }

  cfg.train_cfg.seed = cfg.seed;
  train::TrainResult res = train::fit(std::move(model), ds, cfg.train_cfg, cfg.weights, resume);

  // training log: one JSON record per epoch
  {
    fs::path log_path = out / "train_log.jsonl";
    require_path_writable(log_path, true);
    std::ofstream log(log_path);
    for (const auto& rec : res.log) log << rec.to_json().dump() << "\n";
  }
  op::Checkpoint ck;
  ck.model = std::move(res.model);
  ck.provenance["dataset_hash"] = hash_file(data_path);
  ck.provenance["config_hash"] = hash_bytes(cfg.to_json().dump());
  ck.provenance["code_version"] = kCodeVersion;
  ck.provenance["seed"] = cfg.seed;
  ck.provenance["epochs_trained"] = static_cast<int64_t>(res.log.size());
  ck.provenance["train_grid"] = ds.grid();
  ck.has_optimizer = true;
  ck.opt_step = res.optimizer.step;
  ck.opt_moments = res.optimizer.moments;
  for (const auto& [name, t] : ck.model.params.items)
    if (!ck.opt_moments.count(name))
      ck.opt_moments[name] = {Tensor::zeros(t.shape), Tensor::zeros(t.shape)};
  fs::path ck_path = out / "checkpoint.mnock";
  op::save_checkpoint(ck, ck_path, args.force || res.diverged);
  write_resolved(cfg, out);
  if (res.diverged) {
    std::cerr << "error: " << res.divergence_message << " (last good checkpoint written)\n";
    return 2;
  }
  std::cout << "checkpoint " << ck_path.string() << " hash " << hash_file(ck_path) << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& ckpt_path, const std::string& data_path,
                 const std::string& metrics_csv) {
  cli::RunConfig cfg = resolve_config(args);
  fs::path out(args.out_dir);
  fs::create_directories(out);
  op::Checkpoint ck = op::load_checkpoint(ckpt_path);
  sim::EnsembleDataset raw = sim::load_dataset(data_path);

  eval::EvalOptions opt;
  opt.metric_names = cfg.metrics.names;
  if (!metrics_csv.empty()) {
    opt.metric_names.clear();
    std::stringstream ss(metrics_csv);
    std::string item;
    while (std::getline(ss, item, ',')) opt.metric_names.push_back(item);
  }
  opt.w2_samples = cfg.metrics.w2_samples;
  opt.exceedance_threshold = cfg.metrics.exceedance_threshold;
  opt.seed = cfg.seed;

  ResultBundle bundle = eval::evaluate_model(ck.model, raw, opt);
  bundle.provenance["checkpoint_hash"] = hash_file(ckpt_path);
  bundle.provenance["dataset_hash"] = hash_file(data_path);
  bundle.provenance["config_hash"] = hash_bytes(cfg.to_json().dump());
  bundle.provenance["code_version"] = kCodeVersion;
  int64_t train_grid = ck.provenance.contains("train_grid") ? ck.provenance["train_grid"].get<int64_t>()
                                                            : raw.grid();
  bundle.provenance["zero_shot"] = (train_grid != raw.grid());
  bundle.provenance["eval_grid"] = raw.grid();

  write_json_file(bundle.to_json(), out / "bundle.json", true);
  {
    std::ofstream csv(out / "records.csv");
    csv << "name,value,n_samples,seed\n";
    char buf[64];
    for (const auto& r : bundle.records) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.value);
      csv << r.name << "," << buf << "," << r.n_samples << "," << r.seed << "\n";
    }
  }
  write_resolved(cfg, out);
  std::cout << "bundle " << (out / "bundle.json").string() << " hash " << bundle.content_hash()
            << "\n";
  for (const auto& r : bundle.records) std::cout << "  " << r.name << " = " << r.value << "\n";
  return 0;
}

int cmd_diagnose(const CommonArgs& args, const std::string& name, double hurst_override) {
  cli::RunConfig cfg = resolve_config(args);
  fs::path out(args.out_dir);
  fs::create_directories(out);
  DiagnosticReport rep;
  CsvTable evidence;
  bool have_evidence = false;

  if (name == "head_separation") {
    diag::HeadSepConfig hc;
    hc.model = cfg.model;
    hc.model.channels = 1;
    hc.train = cfg.train_cfg;
    hc.weights = cfg.weights;
    hc.synth = cfg.synth;
    hc.n_ic = cfg.data.n_ic;
    hc.n_ens = cfg.data.n_ens;
    hc.n_ic_test = cfg.data.n_ic_test;
    hc.seed = cfg.seed;
    hc.model.t_scale = cfg.synth.horizon;
    rep = diag::run_head_separation(hc, &evidence);
    have_evidence = true;
  } else if (name == "uncertainty_decomposition") {
    diag::UncertaintyConfig uc;
    uc.model = cfg.model;
    uc.model.channels = 1;
    uc.model.t_scale = cfg.synth.horizon;
    uc.train = cfg.train_cfg;
    uc.weights = cfg.weights;
    uc.synth = cfg.synth;
    uc.n_ic = cfg.data.n_ic;
    uc.n_ens = cfg.data.n_ens;
    uc.n_ic_test = cfg.data.n_ic_test;
    uc.seed = cfg.seed;
    rep = diag::run_uncertainty_decomposition(uc);
  } else if (name == "martingale_mirror") {
    cli::RunConfig lc = cfg;
    lc.task = "logvol";
    if (hurst_override > 0.0) lc.logvol.fbm.hurst = hurst_override;
    lc.model.t_scale = lc.logvol.fbm.horizon;
    sim::EnsembleDataset raw =
        sim::simulate_logvol_ensemble(lc.logvol, lc.data.n_ic, lc.data.n_ens, lc.seed);
    sim::NormStats stats;
    sim::EnsembleDataset ds = sim::normalize_dataset(raw, &stats);
    op::MnoModel model = op::init_mno(lc.model, lc.seed);
    model.norm = stats;
    lc.train_cfg.seed = lc.seed;
    train::TrainResult res = train::fit(std::move(model), ds, lc.train_cfg, lc.weights);
    if (res.diverged) throw NumericError(res.divergence_message);
    diag::MirrorConfig mc;
    mc.seed = lc.seed;
    rep = diag::run_martingale_mirror(res.model, raw, lc.logvol.fbm.hurst, mc);
  } else if (name == "resolution_transfer") {
    cli::RunConfig bc = cfg;
    if (!bc.is_spde_task()) throw ConfigError("resolution_transfer runs on an SPDE task");
    sim::EnsembleDataset train_raw =
        sim::simulate_spde_ensemble(bc.spde, bc.data.n_ic, bc.data.n_ens, bc.seed);
    sim::NormStats stats;
    sim::EnsembleDataset ds = sim::normalize_dataset(train_raw, &stats);
    bc.model.t_scale = bc.spde.horizon;
    op::MnoModel model = op::init_mno(bc.model, bc.seed);
    model.norm = stats;
    bc.train_cfg.seed = bc.seed;
    train::TrainResult res = train::fit(std::move(model), ds, bc.train_cfg, bc.weights);
    if (res.diverged) throw NumericError(res.divergence_message);
    std::vector<sim::EnsembleDataset> evals;
    std::vector<std::pair<int64_t, const sim::EnsembleDataset*>> by_res;
    for (int64_t mult : {1, 2, 4}) {
      sim::SpdeSpec s = bc.spde;
      s.grid = bc.spde.grid * mult;
      s.dt = 0.0;
      evals.push_back(sim::simulate_spde_ensemble(s, bc.data.n_ic_test, bc.data.n_ens, bc.seed + 1));
    }
    for (size_t i = 0; i < evals.size(); ++i)
      by_res.emplace_back(evals[i].grid(), &evals[i]);
    diag::TransferThresholds th;
    rep = diag::run_resolution_transfer(res.model, by_res, th, bc.seed, &evidence);
    have_evidence = true;
  } else if (name == "residual_centering") {
    // oracle-model variant over pure-noise data at several horizons
    cli::RunConfig oc = cfg;
    sim::SpdeSpec s = oc.spde;
    s.equation = sim::Equation::Ou;
    s.hook_disable_drift = true;
    std::vector<double> times;
    std::vector<sim::EnsembleDataset> snaps;
    for (double frac : {0.25, 0.5, 1.0}) {
      sim::SpdeSpec st = s;
      st.horizon = s.horizon * frac;
      snaps.push_back(sim::simulate_spde_ensemble(st, oc.data.n_ic, oc.data.n_ens, oc.seed));
      times.push_back(st.horizon);
    }
    double dx = s.length / static_cast<double>(s.grid);
    double var_rate = s.sigma * s.sigma / dx;
    diag::MomentFn oracle = [var_rate](const Tensor& u0, double t) {
      op::MomentPrediction p;
      p.mean = u0;
      p.factor = Tensor(Shape{1, u0.dim(0), u0.dim(1)}, std::sqrt(var_rate * t));
      p.gate = 1.0;
      return p;
    };
    std::vector<std::pair<double, const sim::EnsembleDataset*>> pairs;
    for (size_t i = 0; i < snaps.size(); ++i) pairs.emplace_back(times[i], &snaps[i]);
    diag::CenteringThresholds th;
    rep = diag::run_residual_centering(oracle, pairs, th, cfg.seed, true);
  } else {
    throw ConfigError("unknown diagnostic '" + name +
                      "' (expected residual_centering|martingale_mirror|resolution_transfer|"
                      "head_separation|uncertainty_decomposition)");
  }

  write_json_file(rep.to_json(), out / (name + "_report.json"), true);
  if (have_evidence) evidence.write(out / (name + "_evidence.csv"));
  write_resolved(cfg, out);
  std::cout << "diagnostic " << name << ": " << (rep.pass ? "pass" : "FAIL") << "\n";
  std::cout << rep.to_json().dump(2) << "\n";
  return rep.pass ? 0 : 3;
}

int cmd_ablate(const CommonArgs& args, const std::string& axis, const std::string& grid_csv,
               int n_seeds) {
  cli::RunConfig cfg = resolve_config(args);
  fs::path out(args.out_dir);
  fs::create_directories(out);

  std::vector<std::string> grid = cfg.ablation.grid;
  if (!grid_csv.empty()) {
    grid.clear();
    std::stringstream ss(grid_csv);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(item);
  }
  if (grid.empty()) {
    if (axis == "rank") grid = {"1", "4", "16"};
    if (axis == "backbone") grid = {"shared", "split"};
    if (axis == "loss") grid = {"full", "no_consistency", "no_martingale", "no_reg", "nll_only"};
  }
  int seeds_n = (n_seeds > 0) ? n_seeds : cfg.ablation.n_seeds;
  std::vector<uint64_t> seeds;
  for (int i = 0; i < seeds_n; ++i) seeds.push_back(cfg.seed + static_cast<uint64_t>(i));

  diag::AblationConfig ac;
  ac.model = cfg.model;
  ac.train = cfg.train_cfg;
  ac.weights = cfg.weights;
  ac.spde = cfg.spde;
  ac.n_ic = cfg.data.n_ic;
  ac.n_ens = cfg.data.n_ens;
  ac.n_ic_test = cfg.data.n_ic_test;
  ac.seed = cfg.seed;

  CsvTable cells;
  ResultBundle bundle = diag::run_ablation(axis, grid, seeds, ac, &cells);
  bundle.provenance["config_hash"] = hash_bytes(cfg.to_json().dump());
  write_json_file(bundle.to_json(), out / ("ablation_" + axis + ".json"), true);
  cells.write(out / ("ablation_" + axis + "_cells.csv"));
  write_resolved(cfg, out);
  std::cout << "ablation " << axis << " bundle hash " << bundle.content_hash() << "\n";
  for (const auto& r : bundle.records) std::cout << "  " << r.name << " = " << r.value << "\n";
  for (const auto& d : bundle.diagnostics)
    if (!d.pass) return 3;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"martingale neural operator toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_path, ckpt_path, resume_path, metrics_csv, diag_name, ablate_axis, grid_csv;
  double hurst_override = 0.0;
  int n_seeds = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config path");
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_flag("--force", common.force, "overwrite existing outputs");
    sub->add_option("--seed", common.seed, "override the config seed")
        ->each([&](const std::string&) { common.has_seed = true; });
  };

  CLI::App* gen = app.add_subcommand("generate", "simulate a dataset and write an MNODS file");
  add_common(gen);

  CLI::App* train_cmd = app.add_subcommand("train", "fit a model on a dataset");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_path, "MNODS dataset path")->required();
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "compute metrics for a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt_path, "MNOCK checkpoint path")->required();
  eval_cmd->add_option("--data", data_path, "MNODS dataset path")->required();
  eval_cmd->add_option("--metrics", metrics_csv, "comma-separated metric names");

  CLI::App* diag_cmd = app.add_subcommand("diagnose", "run a structural diagnostic");
  add_common(diag_cmd);
  diag_cmd->add_option("name", diag_name, "diagnostic name")->required();
  diag_cmd->add_option("--H", hurst_override, "Hurst override for martingale_mirror");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "sweep one architectural or loss axis");
  add_common(ablate_cmd);
  ablate_cmd->add_option("axis", ablate_axis, "rank|backbone|loss")->required();
  ablate_cmd->add_option("--grid", grid_csv, "comma-separated grid values");
  ablate_cmd->add_option("--seeds", n_seeds, "number of seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(common);
    if (train_cmd->parsed()) return cmd_train(common, data_path, resume_path);
    if (eval_cmd->parsed()) return cmd_evaluate(common, ckpt_path, data_path, metrics_csv);
    if (diag_cmd->parsed()) return cmd_diagnose(common, diag_name, hurst_override);
    if (ablate_cmd->parsed()) return cmd_ablate(common, ablate_axis, grid_csv, n_seeds);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
