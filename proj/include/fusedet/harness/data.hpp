#pragma once

#include <string>
#include <vector>

#include "fusedet/det/matching.hpp"
#include "fusedet/harness/config.hpp"
#include "fusedet/radar/geometry.hpp"
#include "fusedet/synth/generator.hpp"

namespace fusedet::harness {

// One split held in RAM: images, clouds, targets. REVP maps are rasterized
// on demand through the projection pipeline (cheap against the conv stack).
struct LoadedDataset {
  synth::CorpusMeta meta;
  std::vector<synth::ManifestEntry> entries;
  std::vector<Tensor<float>> images;
  std::vector<radar::RadarPointCloud> clouds;
  radar::Calibration calib;
  bool normalize = true;

  int64_t size() const { return static_cast<int64_t>(entries.size()); }

  static LoadedDataset load(const std::string& dir, const std::string& split, bool normalize_revp);

  Tensor<float> revp(int64_t i) const;  // [4,H,W]

  det::TargetSet targets(int64_t i) const {
    det::TargetSet t;
    for (const auto& tg : entries[static_cast<size_t>(i)].targets) {
      t.boxes.push_back(tg.box);
      t.classes.push_back(tg.cls);
    }
    return t;
  }

  // Assembles [B,3,H,W] images and [B,4,H,W] REVP maps for the given ids.
  void fill_batch(const std::vector<int64_t>& ids, Tensor<float>* images_out,
                  Tensor<float>* revp_out, std::vector<det::TargetSet>* targets_out) const;
};

// Builds (or reuses) the corpus cache for this config; returns its directory.
// Cache root comes from FUSEDET_CACHE when set.
std::string ensure_corpus(const ExperimentConfig& cfg, const std::string& data_root,
                          bool force = false);

// Stub for ingesting a real camera+radar capture instead of the synthetic
// corpus. Expected on-disk schema (same as the synthetic cache):
//   <dir>/images/NNNNNN.ppm        P6, 8-bit RGB
//   <dir>/clouds/NNNNNN.bin        binary cloud cache (or .txt records
//                                  "x y z velocity power")
//   <dir>/calibration.txt          key-value intrinsics/extrinsics block
//   <dir>/{train,val,test}.manifest  records "index condition ntargets
//                                  {cls cx cy w h}*" with revp_stats header
// Not implemented: this artifact ships with the synthetic benchmark only.
LoadedDataset load_external_dataset(const std::string& dir, const std::string& split);

}  // namespace fusedet::harness
