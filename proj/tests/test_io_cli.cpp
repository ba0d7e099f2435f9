#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mno/config.hpp"
#include "mno/dataset.hpp"
#include "mno/report.hpp"
#include "mno/stochsim.hpp"

using namespace mno;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* tag) {
  fs::path dir = fs::temp_directory_path() / (std::string("mno_io_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(MNO_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("dataset files round-trip byte for byte") {
  fs::path dir = scratch_dir("rt");
  sim::SpdeSpec spec;
  spec.grid = 16;
  spec.horizon = 0.1;
  sim::EnsembleDataset ds = sim::simulate_spde_ensemble(spec, 3, 4, 11);
  fs::path a = dir / "a.mnods";
  sim::save_dataset(ds, a, true);
  sim::EnsembleDataset loaded = sim::load_dataset(a);
  REQUIRE(loaded.u0.data == ds.u0.data);
  REQUIRE(loaded.uT.data == ds.uT.data);
  REQUIRE(loaded.horizon == ds.horizon);
  REQUIRE(loaded.meta.at("seed").get<uint64_t>() == 11);

  fs::path b = dir / "b.mnods";
  sim::save_dataset(loaded, b, true);
  REQUIRE(hash_file(a) == hash_file(b));

  REQUIRE_THROWS_AS(sim::save_dataset(ds, a, false), IoError);
  fs::remove_all(dir);
}

TEST_CASE("dataset loader rejects foreign and truncated files") {
  fs::path dir = scratch_dir("bad");
  fs::path junk = dir / "junk.mnods";
  {
    std::ofstream out(junk, std::ios::binary);
    out << "this is not a dataset";
  }
  REQUIRE_THROWS_AS(sim::load_dataset(junk), IoError);
  REQUIRE_THROWS_AS(sim::load_dataset(dir / "missing.mnods"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("config parsing rejects unknown keys at every level") {
  REQUIRE_THROWS_AS(cli::parse_config(Json::parse(R"({"bogus": 1})")), ConfigError);
  REQUIRE_THROWS_AS(cli::parse_config(Json::parse(R"({"model": {"depth": 3}})")), ConfigError);
  REQUIRE_THROWS_AS(cli::parse_config(Json::parse(R"({"train": {"momentum": 0.9}})")), ConfigError);
  REQUIRE_THROWS_AS(cli::parse_config(Json::parse(R"({"task": "heat"})")), ConfigError);
  REQUIRE_THROWS_AS(cli::parse_config(Json::parse(R"({"profile": "huge"})")), ConfigError);
}

TEST_CASE("profiles carry the documented defaults") {
  cli::RunConfig desk = cli::parse_config(Json::parse(R"({"profile": "desk", "task": "burgers"})"));
  REQUIRE(desk.spde.equation == sim::Equation::Burgers);
  REQUIRE(desk.spde.nu == 0.01);
  REQUIRE(desk.train_cfg.lr == 1e-3);

  cli::RunConfig paper = cli::parse_config(Json::parse(R"({"profile": "paper", "task": "burgers"})"));
  REQUIRE(paper.model.fno.width == 48);
  REQUIRE(paper.model.fno.modes == 16);
  REQUIRE(paper.model.fno.layers == 4);
  REQUIRE(paper.model.rank == 16);
  REQUIRE(paper.train_cfg.epochs == 120);
  REQUIRE(paper.train_cfg.warmup_epochs == 10);
  REQUIRE(paper.train_cfg.batch == 256);
  REQUIRE(paper.data.n_ic == 1000);
  REQUIRE(paper.data.n_ens == 192);

  // overrides land on top of the profile
  cli::RunConfig tweak = cli::parse_config(
      Json::parse(R"({"profile": "paper", "task": "burgers", "model": {"width": 24}})"));
  REQUIRE(tweak.model.fno.width == 24);
  REQUIRE(tweak.model.fno.modes == 16);
}

TEST_CASE("resolved config serializes every section") {
  cli::RunConfig cfg = cli::parse_config(Json::parse(R"({"task": "logvol"})"));
  Json j = cfg.to_json();
  for (const char* key : {"profile", "task", "seed", "spde", "logvol", "synth", "data", "model",
                          "train", "loss", "metrics", "ablation"})
    REQUIRE(j.contains(key));
  // the dump parses back through the same strict parser
  cli::RunConfig again = cli::parse_config(j);
  REQUIRE(again.logvol.fbm.n_t == cfg.logvol.fbm.n_t);
}

TEST_CASE("bundle hashes ignore wall-clock fields") {
  ResultBundle a;
  metrics::MetricRecord r;
  r.name = "x";
  r.value = 1.5;
  a.records.push_back(r);
  a.timings["elapsed_ms"] = 123.0;
  ResultBundle b = a;
  b.timings["elapsed_ms"] = 456.0;
  REQUIRE(a.content_hash() == b.content_hash());
  b.records[0].value = 2.5;
  REQUIRE(a.content_hash() != b.content_hash());
}

TEST_CASE("csv tables write headers and 17-digit values") {
  fs::path dir = scratch_dir("csv");
  CsvTable t;
  t.columns = {"a", "b"};
  t.add_row({1.0, 0.1234567890123456789});
  t.write(dir / "t.csv");
  std::ifstream in(dir / "t.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  REQUIRE(header == "a,b");
  REQUIRE(row.find("0.12345678901234568") != std::string::npos);
  REQUIRE_THROWS_AS(t.add_row({1.0}), Error);
  fs::remove_all(dir);
}

TEST_CASE("cli generate is deterministic and guards overwrites") {
  fs::path dir = scratch_dir("cli_gen");
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"task": "synth_b", "seed": 5, "data": {"n_ic": 4, "n_ens": 8}, "synth": {"grid": 16}})";
  }
  std::string base = "generate --config " + cfg_path.string() + " --out " + (dir / "o1").string();
  REQUIRE(run_cli(base) == 0);
  REQUIRE(fs::exists(dir / "o1" / "synth_b.mnods"));
  REQUIRE(fs::exists(dir / "o1" / "resolved_config.json"));

  // same config and seed to a second directory gives identical bytes
  REQUIRE(run_cli("generate --config " + cfg_path.string() + " --out " + (dir / "o2").string()) == 0);
  REQUIRE(hash_file(dir / "o1" / "synth_b.mnods") == hash_file(dir / "o2" / "synth_b.mnods"));

  // repeat without --force fails with the usage exit code
  REQUIRE(run_cli(base) == 1);
  REQUIRE(run_cli(base + " --force") == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli train, evaluate, and resume cover the happy path") {
  fs::path dir = scratch_dir("cli_train");
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"task": "synth_c", "seed": 9,
               "data": {"n_ic": 8, "n_ens": 8},
               "synth": {"grid": 16},
               "model": {"width": 6, "modes": 4, "layers": 1, "rank": 2},
               "train": {"epochs": 3, "warmup_epochs": 1, "batch": 4}})";
  }
  REQUIRE(run_cli("generate --config " + cfg_path.string() + " --out " + (dir / "d").string()) == 0);
  std::string data = (dir / "d" / "synth_c.mnods").string();

  REQUIRE(run_cli("train --config " + cfg_path.string() + " --data " + data + " --out " +
                  (dir / "t").string()) == 0);
  REQUIRE(fs::exists(dir / "t" / "checkpoint.mnock"));
  REQUIRE(fs::exists(dir / "t" / "train_log.jsonl"));

  // training log is one valid JSON record per epoch
  {
    std::ifstream log(dir / "t" / "train_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      Json rec = Json::parse(line);
      REQUIRE(rec.contains("epoch"));
      REQUIRE(rec.contains("loss"));
      REQUIRE(rec.contains("wall_ms"));
      REQUIRE(rec.contains("lr"));
      ++lines;
    }
    REQUIRE(lines == 3);
  }

  std::string ckpt = (dir / "t" / "checkpoint.mnock").string();
  REQUIRE(run_cli("evaluate --config " + cfg_path.string() + " --ckpt " + ckpt + " --data " + data +
                  " --out " + (dir / "e").string()) == 0);
  REQUIRE(fs::exists(dir / "e" / "bundle.json"));
  REQUIRE(fs::exists(dir / "e" / "records.csv"));

  // unknown metric name is a usage error
  REQUIRE(run_cli("evaluate --config " + cfg_path.string() + " --ckpt " + ckpt + " --data " + data +
                  " --metrics unheard_of --out " + (dir / "e2").string()) == 1);

  // resume restores the optimizer and keeps counting
  REQUIRE(run_cli("train --config " + cfg_path.string() + " --data " + data + " --resume " + ckpt +
                  " --out " + (dir / "t2").string() + " --force") == 0);
  op::Checkpoint first = op::load_checkpoint(dir / "t" / "checkpoint.mnock");
  op::Checkpoint second = op::load_checkpoint(dir / "t2" / "checkpoint.mnock");
  REQUIRE(second.opt_step == 2 * first.opt_step);
  fs::remove_all(dir);
}

TEST_CASE("cli train with zero epochs checkpoints the initialization") {
  fs::path dir = scratch_dir("cli_zero");
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"task": "synth_b", "seed": 3,
               "data": {"n_ic": 4, "n_ens": 4},
               "synth": {"grid": 16},
               "model": {"width": 6, "modes": 4, "layers": 1, "rank": 2},
               "train": {"epochs": 0, "warmup_epochs": 0}})";
  }
  REQUIRE(run_cli("generate --config " + cfg_path.string() + " --out " + (dir / "d").string()) == 0);
  REQUIRE(run_cli("train --config " + cfg_path.string() + " --data " +
                  (dir / "d" / "synth_b.mnods").string() + " --out " + (dir / "t").string()) == 0);
  op::Checkpoint ck = op::load_checkpoint(dir / "t" / "checkpoint.mnock");
  REQUIRE(ck.opt_step == 0);
  REQUIRE(ck.provenance.at("epochs_trained").get<int>() == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli rejects bad usage with exit code 1") {
  REQUIRE(run_cli("conjure") == 1);
  REQUIRE(run_cli("diagnose unheard_of") == 1);
  fs::path dir = scratch_dir("cli_badcfg");
  fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"task": "burgers", "wat": 1})";
  }
  REQUIRE(run_cli("generate --config " + cfg_path.string() + " --out " + (dir / "o").string()) == 1);
  fs::remove_all(dir);
}
