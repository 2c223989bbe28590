#include "fusedet/harness/train.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fusedet/core/optim.hpp"
#include "fusedet/det/loss.hpp"

namespace fusedet::harness {

namespace fs = std::filesystem;

det::LossConfig loss_config(const ExperimentConfig& cfg) {
  det::LossConfig lc;
  lc.w_cls = cfg.w_cls;
  lc.w_l1 = cfg.w_l1;
  lc.w_giou = cfg.w_giou;
  lc.w_qual = cfg.w_qual;
  lc.enc_weight = cfg.enc_loss_weight;
  lc.iou_aware_targets = cfg.iou_aware_cls;
  lc.aux_losses = cfg.aux_losses;
  return lc;
}

namespace {

struct EpochStats {
  double loss = 0, l1 = 0, giou = 0, cls = 0, qual = 0;
  int64_t steps = 0;
  void add(double total, const det::LossResult<float>& r) {
    loss += total;
    l1 += r.layers[2].l1;
    giou += r.layers[2].giou;
    cls += r.layers[2].cls;
    qual += r.qual;
    ++steps;
  }
};

void save_state(const std::string& path, const FullModel<float>& model,
                const AdamW<float>& opt, int64_t epoch, double best_val, int64_t best_epoch) {
  auto arrays = model.snapshot();
  for (const auto& [name, slot] : opt.slots) {
    arrays.emplace("opt.m." + name, slot.m.cast<double>());
    arrays.emplace("opt.v." + name, slot.v.cast<double>());
  }
  arrays.emplace("__opt_t", Tensor<double>::scalar(static_cast<double>(opt.t)));
  arrays.emplace("__epoch", Tensor<double>::scalar(static_cast<double>(epoch)));
  arrays.emplace("__best_val", Tensor<double>::scalar(best_val));
  arrays.emplace("__best_epoch", Tensor<double>::scalar(static_cast<double>(best_epoch)));
  ckpt::save(path, model.cfg.canonical(), arrays);
}

void load_state(const std::string& path, FullModel<float>& model, AdamW<float>& opt,
                int64_t* epoch, double* best_val, int64_t* best_epoch) {
  auto arrays = ckpt::load(path);
  model.restore(arrays);
  for (auto& [name, e] : model.params.entries) {
    auto im = arrays.find("opt.m." + name);
    auto iv = arrays.find("opt.v." + name);
    if (im != arrays.end() && iv != arrays.end()) {
      auto& slot = opt.slots[name];
      slot.m = im->second.cast<float>();
      slot.v = iv->second.cast<float>();
    }
  }
  opt.t = static_cast<int64_t>(arrays.at("__opt_t")[0]);
  if (epoch) *epoch = static_cast<int64_t>(arrays.at("__epoch")[0]);
  if (best_val) *best_val = arrays.at("__best_val")[0];
  if (best_epoch) *best_epoch = static_cast<int64_t>(arrays.at("__best_epoch")[0]);
}

}  // namespace

bool load_summary(const std::string& run_dir, TrainSummary* out) {
  std::ifstream f(fs::path(run_dir) / "summary.json");
  if (!f) return false;
  nlohmann::json j;
  f >> j;
  if (out) {
    out->run_dir = run_dir;
    out->config_hash = j.value("config_hash", "");
    out->param_count = j.value("param_count", int64_t(0));
    out->best_epoch = j.value("best_epoch", int64_t(-1));
    out->best_val_map50 = j.value("best_val_map50", 0.0);
    out->final_train_loss = j.value("final_train_loss", 0.0);
    out->test_report.overall.map50 = j["test"]["overall"]["map50"];
    out->test_report.overall.map5095 = j["test"]["overall"]["map50_95"];
    for (auto& [name, m] : j["test"]["conditions"].items()) {
      ConditionMetrics cm;
      cm.map50 = m["map50"];
      cm.map5095 = m["map50_95"];
      cm.images = m.value("images", int64_t(0));
      out->test_report.by_condition[name] = cm;
    }
  }
  return true;
}

TrainSummary run_training(const ExperimentConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const std::string run_dir = (fs::path(opts.out_root) / cfg.hash8()).string();
  const std::string done_path = (fs::path(run_dir) / "DONE").string();
  if (fs::exists(done_path) && !opts.force) {
    // Hash <-> run-dir bijection: an existing finished hash refuses to run
    // again; --resume reuses it, --force starts over.
    if (opts.resume) {
      TrainSummary existing;
      if (load_summary(run_dir, &existing)) return existing;
    }
    throw ConfigError("run " + cfg.hash8() + " already exists at " + run_dir +
                      " (use --force to re-run)");
  }
  fs::create_directories(run_dir);
  cfg.save((fs::path(run_dir) / "config.txt").string());

  const std::string corpus = ensure_corpus(cfg, opts.data_root);
  auto train_ds = LoadedDataset::load(corpus, "train", cfg.revp_normalize);
  auto val_ds = LoadedDataset::load(corpus, "val", cfg.revp_normalize);
  auto test_ds = LoadedDataset::load(corpus, "test", cfg.revp_normalize);

  FullModel<float> model(cfg);
  AdamW<float> opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  const det::LossConfig lc = loss_config(cfg);

  int64_t start_epoch = 0, best_epoch = -1;
  double best_val = -1;
  const std::string last_path = (fs::path(run_dir) / "last.ckpt").string();
  const std::string best_path = (fs::path(run_dir) / "best.ckpt").string();
  if (opts.resume && fs::exists(last_path)) {
    int64_t ep = 0;
    load_state(last_path, model, opt, &ep, &best_val, &best_epoch);
    start_epoch = ep + 1;
  }

  std::ofstream log((fs::path(run_dir) / "metrics.jsonl").string(), std::ios::app);
  TrainSummary summary;
  summary.run_dir = run_dir;
  summary.config_hash = cfg.hash8();
  summary.param_count = model.param_count();
  if (!opts.quiet)
    std::printf("[train %s] params=%lld corpus=%s\n", cfg.hash8().c_str(),
                static_cast<long long>(summary.param_count), corpus.c_str());

  std::vector<int64_t> order(static_cast<size_t>(train_ds.size()));
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // Per-epoch reseeded shuffle from canonical order keeps resumption exact.
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng(cfg.seed).fork("shuffle").fork(static_cast<uint64_t>(epoch));
    for (int64_t i = train_ds.size() - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

    EpochStats stats;
    for (int64_t start = 0; start < train_ds.size(); start += cfg.batch_size) {
      std::vector<int64_t> ids(order.begin() + start,
                               order.begin() + std::min<int64_t>(train_ds.size(), start + cfg.batch_size));
      Tensor<float> images, revp;
      std::vector<det::TargetSet> targets;
      train_ds.fill_batch(ids, &images, &revp, &targets);

      model.params.zero_grads();
      auto fwd = model.forward(images, revp);
      Var<float> total;
      det::LossResult<float> first_res;
      for (size_t b = 0; b < fwd.samples.size(); ++b) {
        auto res = det::detection_loss(fwd.samples[b], targets[b], lc);
        if (b == 0) first_res = res;
        total = b == 0 ? res.total : ops::add(total, res.total);
      }
      total = ops::scale(total, 1.0f / static_cast<float>(fwd.samples.size()));
      const double loss_val = ops::scalar_of(total);
      if (!std::isfinite(loss_val))
        throw TrainingError("non-finite batch loss at epoch " + std::to_string(epoch));
      backward(total);
      opt.clip_global_norm(model.params, cfg.grad_clip);
      opt.step(model.params);
      model.clamp_radii();
      stats.add(loss_val, first_res);
    }

    auto val_report = evaluate(model, val_ds);
    const double val_map50 = val_report.overall.map50;
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nlohmann::json rec;
    rec["epoch"] = epoch;
    rec["loss"] = stats.loss / std::max<int64_t>(1, stats.steps);
    rec["l1"] = stats.l1 / std::max<int64_t>(1, stats.steps);
    rec["giou"] = stats.giou / std::max<int64_t>(1, stats.steps);
    rec["cls"] = stats.cls / std::max<int64_t>(1, stats.steps);
    rec["qual"] = stats.qual / std::max<int64_t>(1, stats.steps);
    rec["val_map50"] = val_map50;
    rec["sec"] = sec;
    log << rec.dump() << "\n";
    log.flush();
    if (!opts.quiet)
      std::printf("[%s] epoch %lld loss %.4f val mAP50 %.4f (%.1fs)\n", cfg.hash8().c_str(),
                  static_cast<long long>(epoch), stats.loss / std::max<int64_t>(1, stats.steps),
                  val_map50, sec);

    summary.final_train_loss = stats.loss / std::max<int64_t>(1, stats.steps);
    if (val_map50 > best_val) {
      best_val = val_map50;
      best_epoch = epoch;
      save_state(best_path, model, opt, epoch, best_val, best_epoch);
    }
    save_state(last_path, model, opt, epoch, best_val, best_epoch);
    if (opts.stop_after_epoch >= 0 && epoch >= opts.stop_after_epoch) {
      summary.best_epoch = best_epoch;
      summary.best_val_map50 = best_val;
      return summary;  // paused; resume continues from last.ckpt
    }
  }

  summary.best_epoch = best_epoch;
  summary.best_val_map50 = best_val;

  // Final test evaluation on the best checkpoint.
  if (fs::exists(best_path)) {
    AdamW<float> tmp_opt;
    int64_t ep;
    double bv;
    int64_t be;
    load_state(best_path, model, tmp_opt, &ep, &bv, &be);
  }
  summary.test_report = evaluate(model, test_ds);

  nlohmann::json j;
  j["config_hash"] = summary.config_hash;
  j["flags"] = {{"afif", cfg.afif}, {"mseii", cfg.mseii}, {"hifa", cfg.hifa},
                {"smp", cfg.smp_backbone}};
  j["param_count"] = summary.param_count;
  j["best_epoch"] = summary.best_epoch;
  j["best_val_map50"] = summary.best_val_map50;
  j["final_train_loss"] = summary.final_train_loss;
  j["test"] = nlohmann::json::parse(summary.test_report.to_json());
  {
    std::ofstream sf((fs::path(run_dir) / "summary.json").string());
    sf << j.dump(2) << "\n";
  }
  {
    std::ofstream rf((fs::path(run_dir) / "report.txt").string());
    rf << summary.test_report.to_table();
  }
  std::ofstream(done_path) << "ok\n";
  return summary;
}

}  // namespace fusedet::harness
