// Command-line entry point: corpus synthesis, training, evaluation, the
// 8-row module ablation, and a quick smoke run.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fusedet/harness/ablate.hpp"

using namespace fusedet;
using namespace fusedet::harness;

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string preset = "desk";
  std::string config_path;
  std::vector<std::string> sets;  // key=value overrides
  uint64_t seed = 0;
  bool seed_given = false;
};

ExperimentConfig build_config(const CommonOpts& o) {
  ExperimentConfig cfg =
      o.config_path.empty() ? ExperimentConfig::from_preset(o.preset) : ExperimentConfig::load(o.config_path);
  if (o.seed_given) cfg.seed = o.seed;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    check_config(eq != std::string::npos, "--set expects key=value, got: " + kv);
    cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts* o) {
  cmd->add_option("--preset", o->preset, "desk|paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--config", o->config_path, "config file (key=value lines)");
  cmd->add_option("--seed", o->seed, "experiment seed")->each([o](const std::string&) {
    o->seed_given = true;
  });
  cmd->add_option("--set", o->sets, "override any config key (key=value)");
}

void add_flag_overrides(CLI::App* cmd, CommonOpts* o) {
  static const char* flags[] = {"afif", "mseii", "hifa", "smp"};
  for (const char* f : flags) {
    cmd->add_option(std::string("--") + f, "module flag on|off")
        ->check(CLI::IsMember({"on", "off"}))
        ->each([o, f](const std::string& v) { o->sets.push_back(std::string(f) + "=" + v); });
  }
}

int cmd_synth(const CommonOpts& o, const std::string& data_root, bool force) {
  ExperimentConfig cfg = build_config(o);
  const std::string dir = ensure_corpus(cfg, data_root, force);
  synth::CorpusMeta meta;
  synth::read_manifest((fs::path(dir) / "train.manifest").string(), &meta);
  std::printf("corpus at %s\n", dir.c_str());
  std::printf("config_hash %016llx image_size %lld\n",
              static_cast<unsigned long long>(meta.config_hash),
              static_cast<long long>(meta.image_size));
  std::printf("revp stats:");
  for (const auto& s : meta.revp_stats) std::printf(" (%.3f, %.3f)", s.mean, s.std);
  std::printf("\n");
  return 0;
}

int cmd_train(const CommonOpts& o, const TrainOptions& topts) {
  ExperimentConfig cfg = build_config(o);
  auto summary = run_training(cfg, topts);
  std::printf("run %s finished: best val mAP50 %.4f (epoch %lld), test mAP50 %.4f / mAP50-95 %.4f\n",
              summary.config_hash.c_str(), summary.best_val_map50,
              static_cast<long long>(summary.best_epoch), summary.test_report.overall.map50,
              summary.test_report.overall.map5095);
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& split, const std::string& which,
             const std::string& data_root) {
  ExperimentConfig cfg = ExperimentConfig::load((fs::path(run_dir) / "config.txt").string());
  FullModel<float> model(cfg);
  const std::string ckpt_path = (fs::path(run_dir) / (which + ".ckpt")).string();
  auto arrays = ckpt::load(ckpt_path);
  model.restore(arrays);
  const std::string corpus = ensure_corpus(cfg, data_root);
  auto ds = LoadedDataset::load(corpus, split, cfg.revp_normalize);
  auto rep = evaluate(model, ds);
  std::printf("%s", rep.to_table().c_str());
  std::ofstream((fs::path(run_dir) / ("eval_" + split + ".json")).string()) << rep.to_json() << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& o, const TrainOptions& topts) {
  ExperimentConfig base = build_config(o);
  auto table = ablation_run(base, topts);
  std::printf("%s", table.to_text().c_str());
  fs::create_directories(topts.out_root);
  std::ofstream((fs::path(topts.out_root) / "ablation.txt").string()) << table.to_text();
  std::ofstream((fs::path(topts.out_root) / "ablation.json").string()) << table.to_json() << "\n";
  return 0;
}

int cmd_smoke(const CommonOpts& o, TrainOptions topts) {
  ExperimentConfig cfg = build_config(o);
  cfg.n_train = 32;
  cfg.n_val = 8;
  cfg.n_test = 8;
  cfg.epochs = 2;
  topts.force = true;
  auto summary = run_training(cfg, topts);
  // two epochs logged; report the loss trend
  std::ifstream log((fs::path(summary.run_dir) / "metrics.jsonl").string());
  std::string line;
  std::vector<double> losses;
  while (std::getline(log, line)) losses.push_back(nlohmann::json::parse(line)["loss"]);
  if (losses.size() >= 2)
    std::printf("smoke: loss %.4f -> %.4f (%s)\n", losses[losses.size() - 2], losses.back(),
                losses.back() < losses[losses.size() - 2] ? "decreasing" : "NOT decreasing");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camera + 4D mmWave radar fusion detector workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  int threads = 1;
  std::string out_root = "runs";
  std::string data_root;
  bool force = false;
  app.add_option("--threads", threads, "worker threads (deterministic for any value)");
  app.add_option("--out", out_root, "run output root");
  app.add_option("--data", data_root, "corpus cache root (default $FUSEDET_CACHE or ./data_cache)");
  app.add_flag("--force", force, "overwrite an existing run/corpus with the same hash");

  CommonOpts synth_o, train_o, ablate_o, smoke_o;
  auto* synth_cmd = app.add_subcommand("synth", "build the synthetic corpus cache");
  add_common(synth_cmd, &synth_o);

  auto* train_cmd = app.add_subcommand("train", "train a configuration");
  add_common(train_cmd, &train_o);
  add_flag_overrides(train_cmd, &train_o);
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "resume from last.ckpt");

  std::string eval_run, eval_split = "test", eval_which = "best";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a finished run");
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--split", eval_split, "train|val|test");
  eval_cmd->add_option("--ckpt", eval_which, "best|last");

  auto* ablate_cmd = app.add_subcommand("ablate", "train/evaluate all 8 module-flag combinations");
  add_common(ablate_cmd, &ablate_o);

  auto* smoke_cmd = app.add_subcommand("smoke", "2-epoch smoke run on 32 samples");
  add_common(smoke_cmd, &smoke_o);
  add_flag_overrides(smoke_cmd, &smoke_o);

  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);

  TrainOptions topts;
  topts.out_root = out_root;
  topts.data_root = data_root;
  topts.force = force;
  topts.resume = resume;

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth_o, data_root, force);
    if (train_cmd->parsed()) return cmd_train(train_o, topts);
    if (eval_cmd->parsed()) return cmd_eval(eval_run, eval_split, eval_which, data_root);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_o, topts);
    if (smoke_cmd->parsed()) return cmd_smoke(smoke_o, topts);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
