#pragma once

#include <memory>

#include "fusedet/core/serialize.hpp"
#include "fusedet/det/decoder.hpp"
#include "fusedet/enc/encoder.hpp"
#include "fusedet/fusion/afif.hpp"
#include "fusedet/harness/config.hpp"
#include "fusedet/radar/backbone.hpp"
#include "fusedet/vision/backbone.hpp"

namespace fusedet::harness {

// The assembled dual-branch detector:
//   image -> stem -> (AFIF with radar branch) -> MSEII backbone -> encoder
//   -> uncertainty-selected decoder. Off-flags substitute identity/bypass.
template <class T>
struct FullModel {
  ExperimentConfig cfg;
  ParamStore<T> params;
  vision::VisionStem<T> stem;
  radar::RadarBackbone<T> radar_bb;
  fusion::Afif<T> afif;
  vision::VisionBackbone<T> backbone;
  enc::HybridEncoder<T> encoder;
  det::Decoder<T> decoder;

  explicit FullModel(const ExperimentConfig& c) : cfg(c), params(c.seed) {
    cfg.validate();
    stem = vision::VisionStem<T>(params, "stem", 3, cfg.widths[0]);
    if (cfg.afif) {
      radar_bb = radar::RadarBackbone<T>(params, "radar", cfg.radar_ch, cfg.radar_blocks,
                                         cfg.smp_backbone, cfg.smp_points);
      afif = fusion::Afif<T>(params, "afif", cfg.widths[0], cfg.radar_ch, cfg.fuse_ch, 8,
                             cfg.fse_input == "fused");
    }
    backbone = vision::VisionBackbone<T>(params, "bb", cfg.widths[0], cfg.widths,
                                         cfg.mseii_width, cfg.mseii);
    encoder = enc::HybridEncoder<T>(params, "enc", cfg.widths[1], cfg.widths[2], cfg.widths[3],
                                    cfg.enc_ch, cfg.hifa, cfg.hifa_chunks,
                                    cfg.encoder_attention == "top_level", cfg.heads);
    decoder = det::Decoder<T>(params, "dec", cfg.enc_ch, cfg.heads, cfg.num_queries,
                              cfg.num_classes, cfg.decoder_layers);
  }

  struct ForwardResult {
    std::vector<det::SampleDecode<T>> samples;
    enc::EncoderMemory<T> memory;
    Var<T> stem_out;  // F_I
    Var<T> enhanced;  // I_e fed to the backbone
  };

  ForwardResult forward(const Tensor<T>& images, const Tensor<T>& revp) const {
    ForwardResult out;
    Var<T> img = Var<T>::constant(images);
    out.stem_out = stem.forward(img);
    if (cfg.afif) {
      Var<T> fr = radar_bb.forward(Var<T>::constant(revp));
      out.enhanced = afif.forward(out.stem_out, fr).enhanced_image;
    } else {
      out.enhanced = out.stem_out;  // vision-only: radar branch unused
    }
    vision::EdgePyramid<T> pyr;
    if (cfg.mseii) {
      // Edge extraction from the shallow stem features, never the raw image.
      auto [gx, gy] = vision::sobel_gradients(out.stem_out);
      pyr = vision::edge_pyramid(vision::edge_magnitude(gx, gy), 3);
    }
    auto feats = backbone.forward(out.enhanced, pyr);
    out.memory = encoder.forward(feats);
    const int64_t B = images.dim(0);
    out.samples.reserve(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b)
      out.samples.push_back(
          decoder.forward_sample(ops::select_batch(out.memory.tokens, b), out.memory.positions,
                                 out.memory.level_id));
    return out;
  }

  void clamp_radii() {
    if (cfg.afif) radar_bb.clamp_radii();
  }

  int64_t param_count() const { return const_cast<ParamStore<T>&>(params).param_count(); }

  std::map<std::string, Tensor<double>> snapshot() const {
    std::map<std::string, Tensor<double>> out;
    for (const auto& [name, e] : params.entries)
      out.emplace(name, e.var.node_->val.template cast<double>());
    return out;
  }

  void restore(const std::map<std::string, Tensor<double>>& arrays) {
    for (auto& [name, e] : params.entries) {
      auto it = arrays.find(name);
      check(it != arrays.end(), "checkpoint missing parameter: " + name);
      check_shape(it->second.shape == e.var.shape(), "checkpoint shape mismatch for " + name);
      e.var.node_->val = it->second.template cast<T>();
    }
  }
};

}  // namespace fusedet::harness
