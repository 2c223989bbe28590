#pragma once

#include <string>
#include <vector>

#include "fusedet/det/decoder.hpp"
#include "fusedet/det/giou_op.hpp"
#include "fusedet/det/matching.hpp"

namespace fusedet::det {

struct LossConfig {
  double w_cls = 1.0, w_l1 = 5.0, w_giou = 2.0;
  double w_qual = 1.0;      // localization-quality head supervision (encoder stage)
  double enc_weight = 1.0;  // weight of the encoder-stage auxiliary loss
  bool iou_aware_targets = true;  // soft class targets scaled by matched IoU
  bool aux_losses = true;         // per-decoder-layer auxiliary losses
};

struct LossParts {
  double l1 = 0, giou = 0, cls = 0;
};

template <class T>
struct LossResult {
  Var<T> total;
  std::vector<LossParts> layers;  // decoder layers, then the encoder stage last
  double qual = 0;
  int64_t matched = 0;
};

namespace detail {

template <class T>
void check_component(double v, const std::string& layer, const std::string& comp) {
  if (!std::isfinite(v))
    throw TrainingError("non-finite loss at " + layer + "/" + comp);
}

// One layer's box + classification loss. Matching runs on detached values;
// box terms average over matched pairs, classification is BCE over every
// (query, class) cell against soft targets (matched IoU or 1, else 0),
// normalized by the matched count.
template <class T>
std::pair<Var<T>, LossParts> layer_loss(const LayerOutput<T>& pred, const TargetSet& targets,
                                        const LossConfig& cfg, const std::string& tag,
                                        const MatchResult& match) {
  const int64_t N = pred.logits.dim(0), C = pred.logits.dim(1);
  const int64_t M = static_cast<int64_t>(match.pairs.size());
  const T norm = static_cast<T>(1.0 / std::max<int64_t>(1, M));

  Tensor<T> cls_targets({N, C});
  Var<T> box_term, giou_term;
  if (M > 0) {
    std::vector<int64_t> pred_idx;
    Tensor<T> tgt_boxes({M, 4});
    int64_t row = 0;
    for (auto& [pi, tj] : match.pairs) {
      pred_idx.push_back(pi);
      for (int k = 0; k < 4; ++k) tgt_boxes.at2(row, k) = static_cast<T>(targets.boxes[tj][k]);
      Box pb;
      for (int k = 0; k < 4; ++k) pb[k] = static_cast<double>(pred.boxes.val().at2(pi, k));
      const double q = cfg.iou_aware_targets ? std::max(0.0, iou(pb, targets.boxes[tj])) : 1.0;
      cls_targets.at2(pi, targets.classes[tj]) = static_cast<T>(q);
      ++row;
    }
    Var<T> matched_boxes = ops::select_rows(pred.boxes, pred_idx);
    box_term = ops::scale(ops::sum_all(ops::abs_op(ops::sub(matched_boxes, Var<T>::constant(tgt_boxes)))), norm);
    Var<T> g = giou_column(matched_boxes, tgt_boxes);
    giou_term = ops::scale(ops::sum_all(ops::add_const(ops::neg(g), T(1))), norm);
  } else {
    box_term = Var<T>::constant(Tensor<T>::scalar(0));
    giou_term = Var<T>::constant(Tensor<T>::scalar(0));
  }
  Var<T> cls_term = ops::scale(ops::bce_with_logits_sum(pred.logits, cls_targets), norm);

  LossParts parts;
  parts.l1 = ops::scalar_of(box_term);
  parts.giou = ops::scalar_of(giou_term);
  parts.cls = ops::scalar_of(cls_term);
  check_component<T>(parts.l1, tag, "l1");
  check_component<T>(parts.giou, tag, "giou");
  check_component<T>(parts.cls, tag, "cls");

  Var<T> total = ops::add(
      ops::add(ops::scale(box_term, static_cast<T>(cfg.w_l1)),
               ops::scale(giou_term, static_cast<T>(cfg.w_giou))),
      ops::scale(cls_term, static_cast<T>(cfg.w_cls)));
  return {total, parts};
}

template <class T>
MatchResult match_layer(const LayerOutput<T>& pred, const TargetSet& targets,
                        const LossConfig& cfg) {
  const int64_t N = pred.logits.dim(0), C = pred.logits.dim(1);
  std::vector<Box> boxes(N);
  std::vector<std::vector<double>> probs(N, std::vector<double>(C));
  for (int64_t i = 0; i < N; ++i) {
    for (int k = 0; k < 4; ++k) boxes[i][k] = static_cast<double>(pred.boxes.val().at2(i, k));
    for (int64_t c = 0; c < C; ++c)
      probs[i][c] = 1.0 / (1.0 + std::exp(-static_cast<double>(pred.logits.val().at2(i, c))));
  }
  return hungarian_match(boxes, probs, targets, MatchWeights{cfg.w_cls, cfg.w_l1, cfg.w_giou});
}

}  // namespace detail

// Composite set-prediction loss for one sample: per-decoder-layer box
// regression (L1 + GIoU over matched pairs) and classification against
// soft, quality-modulated targets, averaged over the decoder layers, plus
// the encoder-stage auxiliary loss that also supervises the localization
// quality head toward the matched IoU.
template <class T>
LossResult<T> detection_loss(const SampleDecode<T>& dec, const TargetSet& targets,
                             const LossConfig& cfg = {}) {
  LossResult<T> res;
  std::vector<Var<T>> layer_totals;
  const size_t L = dec.layers.size();
  for (size_t l = 0; l < L; ++l) {
    const bool counted = cfg.aux_losses || l + 1 == L;
    const MatchResult m = detail::match_layer(dec.layers[l], targets, cfg);
    auto [total, parts] = detail::layer_loss(dec.layers[l], targets, cfg,
                                             "decoder" + std::to_string(l + 1), m);
    res.layers.push_back(parts);
    if (l + 1 == L) res.matched = static_cast<int64_t>(m.pairs.size());
    if (counted) layer_totals.push_back(total);
  }
  Var<T> dec_total = layer_totals[0];
  for (size_t i = 1; i < layer_totals.size(); ++i) dec_total = ops::add(dec_total, layer_totals[i]);
  dec_total = ops::scale(dec_total, static_cast<T>(1.0 / static_cast<double>(layer_totals.size())));

  // Encoder-stage auxiliary supervision (selection heads are untrainable
  // without it: scores and quality feed only the discrete top-K rule).
  const MatchResult em = detail::match_layer(dec.encoder_stage, targets, cfg);
  auto [enc_total, enc_parts] = detail::layer_loss(dec.encoder_stage, targets, cfg, "encoder", em);
  res.layers.push_back(enc_parts);
  Tensor<T> qual_targets({dec.qual_logits.dim(0), 1});
  for (auto& [pi, tj] : em.pairs) {
    Box pb;
    for (int k = 0; k < 4; ++k)
      pb[k] = static_cast<double>(dec.encoder_stage.boxes.val().at2(pi, k));
    qual_targets.at2(pi, 0) = static_cast<T>(std::max(0.0, iou(pb, targets.boxes[tj])));
  }
  Var<T> qual_term =
      ops::scale(ops::bce_with_logits_sum(dec.qual_logits, qual_targets),
                 static_cast<T>(1.0 / std::max<size_t>(1, em.pairs.size())));
  res.qual = ops::scalar_of(qual_term);
  detail::check_component<T>(res.qual, "encoder", "qual");
  enc_total = ops::add(enc_total, ops::scale(qual_term, static_cast<T>(cfg.w_qual)));

  res.total = ops::add(dec_total, ops::scale(enc_total, static_cast<T>(cfg.enc_weight)));
  return res;
}

}  // namespace fusedet::det
