#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "fusedet/synth/generator.hpp"

namespace fusedet::harness {

// Full experiment description. Serializes to canonical key=value text whose
// hash names the run directory, so identical configs map to identical runs.
struct ExperimentConfig {
  // module flags
  bool afif = true, mseii = true, hifa = true, smp_backbone = true;
  std::string preset = "desk";  // desk | paper

  // model
  int64_t image_size = 128;
  std::array<int64_t, 4> widths{32, 64, 128, 256};
  int64_t radar_ch = 32;
  int64_t radar_blocks = 2;
  int64_t smp_points = 9;
  int64_t fuse_ch = 64;     // AFIF common width
  int64_t mseii_width = 32;
  int64_t enc_ch = 48;      // encoder width C_e (divisible by K=3, heads, 4)
  int64_t hifa_chunks = 3;
  std::string fse_input = "fused";          // AFIF stage-2 operand: fused|raw_radar
  std::string encoder_attention = "off";    // off|top_level
  int64_t heads = 2;
  int64_t num_queries = 30;
  int64_t num_classes = 3;
  int64_t decoder_layers = 3;
  bool revp_normalize = true;

  // training protocol
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  int64_t epochs = 40;
  int64_t batch_size = 8;
  uint64_t seed = 0;

  // loss
  double w_cls = 1.0, w_l1 = 5.0, w_giou = 2.0, w_qual = 1.0, enc_loss_weight = 1.0;
  bool iou_aware_cls = true;
  bool aux_losses = true;

  // data
  int64_t n_train = 700, n_val = 200, n_test = 100;

  // evaluation protocol
  double score_threshold = 0.05;
  int64_t max_detections = 30;

  std::string canonical() const;
  std::string hash8() const;
  void validate() const;

  synth::SynthConfig synth_config() const;

  static ExperimentConfig desk();
  static ExperimentConfig paper();
  static ExperimentConfig from_preset(const std::string& name);

  // key=value parsing; unknown keys are an error naming the key.
  void apply(const std::string& key, const std::string& value);
  static ExperimentConfig load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace fusedet::harness
