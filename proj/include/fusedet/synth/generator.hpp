#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusedet/core/tensor.hpp"
#include "fusedet/det/boxes.hpp"
#include "fusedet/radar/geometry.hpp"

namespace fusedet::synth {

enum class Condition { Normal, AdverseLighting, AdverseWeather };

const char* condition_name(Condition c);
Condition condition_from_name(const std::string& name);

struct Target {
  int cls = 0;        // 0 buoy-like, 1 boat-like, 2 ship-like
  det::Box box{};     // normalized cxcywh, fully inside [0,1]^4
};

struct SceneSample {
  Tensor<float> image;  // [3,H,W] in [0,1]
  radar::RadarPointCloud cloud;
  std::vector<Target> targets;
  Condition condition = Condition::Normal;
  uint64_t seed = 0;
  int64_t index = 0;
  // Generator bookkeeping: per object, opaque pixels inside/total (label
  // soundness check).
  std::vector<std::pair<int64_t, int64_t>> coverage;
};

struct SynthConfig {
  int64_t image_size = 128;
  int num_classes = 3;
  int objects_min = 1, objects_max = 10;
  double blur_sigma_min = 0.4, blur_sigma_max = 1.8;
  int radar_points_min = 2, radar_points_max = 8;
  int clutter_min = 3, clutter_max = 10;
  double power_noise_std = 1.0;
  double mix_normal = 0.4, mix_lighting = 0.3, mix_weather = 0.3;
  uint64_t seed = 0;

  std::string canonical() const;
  uint64_t hash() const;
  radar::Calibration calibration() const {
    return radar::Calibration::synthetic_default(image_size, image_size);
  }
};

// Deterministic for (cfg.seed, index); always produces the Normal-condition
// scene. Objects use class-specific scale distributions spanning >= 8x in
// linear size across the corpus; radar points land on object interiors with
// class-correlated velocity/power plus uniform clutter.
SceneSample generate_scene(const SynthConfig& cfg, int64_t index);

// Image-space degradation only; the radar cloud and targets are untouched.
// Requires s.condition == Normal (double application is an error).
SceneSample apply_condition(const SceneSample& s, Condition condition);

struct SplitRecord {
  int64_t index = 0;
  Condition condition = Condition::Normal;
};

struct Splits {
  std::vector<SplitRecord> train, val, test;
};

// Disjoint index ranges; train/val conditions follow the config mix, the
// test split cycles conditions so it carries dedicated adverse subsets.
Splits build_splits(const SynthConfig& cfg, int64_t n_train, int64_t n_val, int64_t n_test);

// --- corpus on disk -------------------------------------------------------
// layout: <dir>/images/NNNNNN.ppm, <dir>/clouds/NNNNNN.bin,
//         <dir>/{train,val,test}.manifest
struct ManifestEntry {
  int64_t index;
  Condition condition;
  std::vector<Target> targets;
};

struct CorpusMeta {
  uint64_t config_hash = 0;
  int64_t image_size = 0;
  int num_classes = 0;
  radar::RevpStats revp_stats;
};

void write_ppm(const std::string& path, const Tensor<float>& image);
Tensor<float> read_ppm(const std::string& path);

// Builds (or reuses) the cached corpus; returns stats computed on the train
// split. Cache writes go through a temp-file rename so parallel builders
// cannot interleave.
CorpusMeta build_corpus(const SynthConfig& cfg, const Splits& splits, const std::string& dir,
                        bool force = false);

std::vector<ManifestEntry> read_manifest(const std::string& path, CorpusMeta* meta = nullptr);

}  // namespace fusedet::synth
