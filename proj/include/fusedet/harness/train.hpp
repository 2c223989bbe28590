#pragma once

#include <string>

#include "fusedet/det/loss.hpp"
#include "fusedet/harness/metrics.hpp"

namespace fusedet::harness {

struct TrainOptions {
  std::string out_root = "runs";
  std::string data_root;      // empty -> FUSEDET_CACHE or ./data_cache
  bool resume = false;        // continue from last.ckpt / reuse a finished run
  bool force = false;         // re-run an existing finished hash from scratch
  bool quiet = false;
  int64_t stop_after_epoch = -1;  // test hook: pause training after this epoch
};

struct TrainSummary {
  std::string run_dir;
  std::string config_hash;
  int64_t param_count = 0;
  int64_t best_epoch = -1;
  double best_val_map50 = 0;
  double final_train_loss = 0;
  EvalReport test_report;
};

// Seeded, deterministic (single-worker) training loop: AdamW, global-norm
// gradient clipping, post-step radius clamping, per-epoch val mAP50 logging,
// best/last checkpoints, final test evaluation on the best checkpoint.
TrainSummary run_training(const ExperimentConfig& cfg, const TrainOptions& opts);

// Loads a finished run's summary.json if present.
bool load_summary(const std::string& run_dir, TrainSummary* out);

det::LossConfig loss_config(const ExperimentConfig& cfg);

}  // namespace fusedet::harness
