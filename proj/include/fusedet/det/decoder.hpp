#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "fusedet/core/nn.hpp"
#include "fusedet/enc/encoder.hpp"

namespace fusedet::det {

// Sine-cosine embedding of normalized 2D positions into `dim` channels
// (dim/2 per axis, interleaved sin/cos, DETR-style temperature).
template <class T>
Tensor<T> sincos_embed_2d(const Tensor<T>& pos, int64_t dim) {
  const int64_t L = pos.dim(0), half = dim / 2;
  Tensor<T> out({L, dim});
  const double two_pi = 2.0 * M_PI;
  for (int64_t l = 0; l < L; ++l)
    for (int axis = 0; axis < 2; ++axis) {
      const double p = static_cast<double>(pos.at2(l, axis)) * two_pi;
      for (int64_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        out.at2(l, axis * half + 2 * i) = static_cast<T>(std::sin(p * freq));
        out.at2(l, axis * half + 2 * i + 1) = static_cast<T>(std::cos(p * freq));
      }
    }
  return out;
}

// Clamped inverse sigmoid on plain values (applied to detached references).
template <class T>
Tensor<T> logit_clamped(const Tensor<T>& p, T eps = static_cast<T>(1e-6)) {
  Tensor<T> out(p.shape);
  for (int64_t i = 0; i < p.numel(); ++i) {
    const T v = std::clamp(p[i], eps, T(1) - eps);
    out[i] = std::log(v / (T(1) - v));
  }
  return out;
}

// Eq.-style feature uncertainty: absolute gap between the localization
// quality estimate P and the top class probability C, per token.
inline std::vector<double> uncertainty(const std::vector<double>& loc_quality,
                                       const std::vector<double>& top_class_prob) {
  std::vector<double> u(loc_quality.size());
  for (size_t i = 0; i < u.size(); ++i) u[i] = std::abs(loc_quality[i] - top_class_prob[i]);
  return u;
}

// Rank tokens by score - lambda * U, take the top k; ties break on the lower
// token index. Throws ConfigError when k exceeds the token count.
inline std::vector<int64_t> select_queries(const std::vector<double>& scores,
                                           const std::vector<double>& u, double lambda,
                                           int64_t k) {
  check_config(k <= static_cast<int64_t>(scores.size()),
               "select_queries: k exceeds token count");
  std::vector<int64_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    const double ca = scores[static_cast<size_t>(a)] - lambda * u[static_cast<size_t>(a)];
    const double cb = scores[static_cast<size_t>(b)] - lambda * u[static_cast<size_t>(b)];
    if (ca != cb) return ca > cb;
    return a < b;
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

// Per-layer prediction set for one sample.
template <class T>
struct LayerOutput {
  Var<T> logits;  // [N, num_classes]
  Var<T> boxes;   // [N, 4] normalized cxcywh
};

template <class T>
struct SampleDecode {
  std::vector<LayerOutput<T>> layers;  // decoder layers, refs refined layer to layer
  LayerOutput<T> encoder_stage;        // selected-token predictions (aux supervision)
  Var<T> qual_logits;                  // [N, 1] selected localization-quality logits
  std::vector<int64_t> selected;       // token indices chosen by the uncertainty rule
};

// Uncertainty-selected 3-layer transformer decoder with per-layer heads and
// iterative box refinement (references detached between layers).
template <class T>
struct Decoder {
  struct Layer {
    nn::MultiheadAttention<T> self_attn, cross_attn;
    nn::LayerNorm<T> ln1, ln2, ln3;
    nn::Linear<T> ffn1, ffn2;
    nn::Linear<T> cls_head, box_head1, box_head2;
  };

  nn::Linear<T> enc_cls, enc_qual, enc_box1, enc_box2;
  std::vector<Layer> layers;
  int64_t dim = 0, num_queries = 30, num_classes = 3;
  double sel_lambda = 1.0;
  // Per-pyramid-level anchor box size; token references start as anchors at
  // the token's own grid position (the box head predicts logit-space deltas).
  std::array<double, 3> anchor_sizes{0.08, 0.18, 0.40};

  Decoder() = default;
  Decoder(ParamStore<T>& ps, const std::string& name, int64_t dim_, int64_t heads,
          int64_t num_queries_, int64_t num_classes_, int64_t num_layers = 3,
          double sel_lambda_ = 1.0)
      : enc_cls(ps, name + ".enc_cls", dim_, num_classes_),
        enc_qual(ps, name + ".enc_qual", dim_, 1),
        enc_box1(ps, name + ".enc_box1", dim_, dim_),
        enc_box2(ps, name + ".enc_box2", dim_, 4, true, nn::Init::Zero),
        dim(dim_),
        num_queries(num_queries_),
        num_classes(num_classes_),
        sel_lambda(sel_lambda_) {
    check_config(dim_ % 4 == 0, "decoder dim must be divisible by 4 for sincos embedding");
    for (int64_t l = 0; l < num_layers; ++l) {
      const std::string ln = name + ".l" + std::to_string(l);
      layers.push_back(Layer{
          nn::MultiheadAttention<T>(ps, ln + ".sa", dim_, heads),
          nn::MultiheadAttention<T>(ps, ln + ".ca", dim_, heads),
          nn::LayerNorm<T>(ps, ln + ".ln1", dim_),
          nn::LayerNorm<T>(ps, ln + ".ln2", dim_),
          nn::LayerNorm<T>(ps, ln + ".ln3", dim_),
          nn::Linear<T>(ps, ln + ".ffn1", dim_, 4 * dim_),
          nn::Linear<T>(ps, ln + ".ffn2", 4 * dim_, dim_),
          nn::Linear<T>(ps, ln + ".cls", dim_, num_classes_),
          nn::Linear<T>(ps, ln + ".box1", dim_, dim_),
          // Zero-init final box layer: layer boxes start at their references.
          nn::Linear<T>(ps, ln + ".box2", dim_, 4, true, nn::Init::Zero),
      });
    }
  }

  // mem: [Tokens, dim] for one sample with per-token normalized positions
  // and pyramid level ids (anchor geometry).
  SampleDecode<T> forward_sample(const Var<T>& mem, const Tensor<T>& mem_pos,
                                 const std::vector<int>& level_id) const {
    const int64_t Tok = mem.dim(0);
    check_shape(static_cast<int64_t>(level_id.size()) == Tok, "decoder: level ids per token");
    Var<T> enc_logits = enc_cls.forward(mem);
    Var<T> enc_q = enc_qual.forward(mem);

    std::vector<double> score(Tok), qual(Tok);
    for (int64_t t = 0; t < Tok; ++t) {
      double best = 0;
      for (int64_t c = 0; c < num_classes; ++c)
        best = std::max(best, 1.0 / (1.0 + std::exp(-static_cast<double>(enc_logits.val().at2(t, c)))));
      score[t] = best;
      qual[t] = 1.0 / (1.0 + std::exp(-static_cast<double>(enc_q.val().at2(t, 0))));
    }
    const std::vector<double> u = uncertainty(qual, score);
    SampleDecode<T> out;
    out.selected = select_queries(score, u, sel_lambda, num_queries);

    // Anchors: token position with a level-scaled extent, in logit space so
    // the zero-initialized delta head starts exactly at the anchor.
    Tensor<T> anchor_logit({num_queries, 4});
    for (int64_t i = 0; i < num_queries; ++i) {
      const int64_t t = out.selected[static_cast<size_t>(i)];
      const double s = anchor_sizes[static_cast<size_t>(
          std::min<int>(2, level_id[static_cast<size_t>(t)]))];
      const double a[4] = {static_cast<double>(mem_pos.at2(t, 0)),
                           static_cast<double>(mem_pos.at2(t, 1)), s, s};
      for (int k = 0; k < 4; ++k) {
        const double p = std::clamp(a[k], 1e-4, 1.0 - 1e-4);
        anchor_logit.at2(i, k) = static_cast<T>(std::log(p / (1.0 - p)));
      }
    }

    Var<T> content = ops::select_rows(mem, out.selected);
    Var<T> delta = enc_box2.forward(ops::silu(enc_box1.forward(content)));
    Var<T> refs = ops::sigmoid(ops::add(delta, Var<T>::constant(anchor_logit)));
    out.encoder_stage = {ops::select_rows(enc_logits, out.selected), refs};
    out.qual_logits = ops::select_rows(enc_q, out.selected);

    const Var<T> mem_pos_v = Var<T>::constant(sincos_embed_2d(mem_pos, dim));
    const Var<T> mem_k = ops::add(mem, mem_pos_v);

    for (const Layer& L : layers) {
      // Query positions from the current reference centers. The whole
      // refinement chain stays differentiable (no detached references).
      Var<T> qpos = ops::sincos2d(ops::slice_cols(refs, 0, 2), dim);

      Var<T> q = ops::add(content, qpos);
      content = L.ln1.forward(ops::add(content, L.self_attn.forward(q, q, content)));
      Var<T> q2 = ops::add(content, qpos);
      content = L.ln2.forward(ops::add(content, L.cross_attn.forward(q2, mem_k, mem)));
      Var<T> ff = L.ffn2.forward(ops::silu(L.ffn1.forward(content)));
      content = L.ln3.forward(ops::add(content, ff));

      Var<T> logits = L.cls_head.forward(content);
      Var<T> delta = L.box_head2.forward(ops::silu(L.box_head1.forward(content)));
      Var<T> boxes = ops::sigmoid(ops::add(delta, ops::logit(refs)));
      out.layers.push_back({logits, boxes});
      refs = boxes;
    }
    return out;
  }
};

}  // namespace fusedet::det
