#include "fusedet/harness/data.hpp"

#include <cstdio>
#include <filesystem>

namespace fusedet::harness {

namespace fs = std::filesystem;

LoadedDataset LoadedDataset::load(const std::string& dir, const std::string& split,
                                  bool normalize_revp) {
  LoadedDataset ds;
  ds.normalize = normalize_revp;
  ds.entries = synth::read_manifest((fs::path(dir) / (split + ".manifest")).string(), &ds.meta);
  ds.calib = radar::Calibration::synthetic_default(ds.meta.image_size, ds.meta.image_size);
  ds.images.reserve(ds.entries.size());
  ds.clouds.reserve(ds.entries.size());
  char name[32];
  for (const auto& e : ds.entries) {
    std::snprintf(name, sizeof(name), "%06lld.ppm", static_cast<long long>(e.index));
    ds.images.push_back(synth::read_ppm((fs::path(dir) / "images" / name).string()));
    std::snprintf(name, sizeof(name), "%06lld.bin", static_cast<long long>(e.index));
    ds.clouds.push_back(radar::read_cloud_binary((fs::path(dir) / "clouds" / name).string()));
  }
  return ds;
}

Tensor<float> LoadedDataset::revp(int64_t i) const {
  const int64_t S = meta.image_size;
  auto proj = radar::project_points(clouds[static_cast<size_t>(i)], calib);
  auto map = radar::build_revp_map<float>(proj, S, S);
  if (normalize) map = radar::normalize_revp(map, meta.revp_stats);
  return map.data;  // [4,H,W]
}

void LoadedDataset::fill_batch(const std::vector<int64_t>& ids, Tensor<float>* images_out,
                               Tensor<float>* revp_out, std::vector<det::TargetSet>* targets_out) const {
  const int64_t B = static_cast<int64_t>(ids.size());
  const int64_t S = meta.image_size;
  if (images_out) {
    *images_out = Tensor<float>({B, 3, S, S});
    for (int64_t b = 0; b < B; ++b)
      std::copy(images[static_cast<size_t>(ids[b])].data.begin(),
                images[static_cast<size_t>(ids[b])].data.end(),
                images_out->ptr() + b * 3 * S * S);
  }
  if (revp_out) {
    *revp_out = Tensor<float>({B, 4, S, S});
    for (int64_t b = 0; b < B; ++b) {
      Tensor<float> r = revp(ids[static_cast<size_t>(b)]);
      std::copy(r.data.begin(), r.data.end(), revp_out->ptr() + b * 4 * S * S);
    }
  }
  if (targets_out) {
    targets_out->clear();
    for (int64_t id : ids) targets_out->push_back(targets(id));
  }
}

LoadedDataset load_external_dataset(const std::string& dir, const std::string& split) {
  throw IoError("external dataset ingestion is not implemented; lay out " + dir +
                " per the schema in data.hpp and extend this loader (split: " + split + ")");
}

std::string ensure_corpus(const ExperimentConfig& cfg, const std::string& data_root, bool force) {
  std::string root = data_root;
  if (root.empty()) {
    const char* env = std::getenv("FUSEDET_CACHE");
    root = env ? env : "data_cache";
  }
  const auto synth_cfg = cfg.synth_config();
  char hash[20];
  std::snprintf(hash, sizeof(hash), "%012llx",
                static_cast<unsigned long long>(synth_cfg.hash() ^ static_cast<uint64_t>(cfg.n_train * 31 + cfg.n_val * 7 + cfg.n_test)));
  const std::string dir = (fs::path(root) / (std::string("corpus_") + hash)).string();
  fs::create_directories(dir);
  const auto splits = synth::build_splits(synth_cfg, cfg.n_train, cfg.n_val, cfg.n_test);
  synth::build_corpus(synth_cfg, splits, dir, force);
  return dir;
}

}  // namespace fusedet::harness
