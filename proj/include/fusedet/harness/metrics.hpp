#pragma once

#include <map>
#include <string>
#include <vector>

#include "fusedet/det/boxes.hpp"
#include "fusedet/harness/data.hpp"
#include "fusedet/harness/model.hpp"

namespace fusedet::harness {

// Per-image predictions of one class for AP computation.
struct ApImage {
  std::vector<std::pair<double, det::Box>> preds;  // (score, box), any order
  std::vector<det::Box> gts;
};

// Average precision with 101-point interpolation. Matching is greedy in
// global score order: a prediction claims the unmatched GT of highest IoU
// >= iou_thresh in its image (ties -> lower GT index). Returns -1 when the
// class has no ground truth (caller excludes it from the mean).
double compute_ap(const std::vector<ApImage>& images, double iou_thresh);

struct ConditionMetrics {
  double map50 = 0, map5095 = 0;
  std::vector<double> per_class_ap50;
  int64_t images = 0;
};

struct EvalReport {
  ConditionMetrics overall;
  std::map<std::string, ConditionMetrics> by_condition;
  int64_t num_classes = 0;
  double runtime_sec = 0;
  double score_threshold = 0.05;
  int64_t max_detections = 30;

  std::string to_json() const;
  std::string to_table() const;
};

struct Prediction {
  int cls = 0;
  double score = 0;
  det::Box box{};
};

// Raw per-image detections (score-filtered, capped, no NMS by design).
struct ImageDetections {
  std::vector<Prediction> preds;
  det::TargetSet gt;
  std::string condition;
};

EvalReport make_report(const std::vector<ImageDetections>& images, int64_t num_classes,
                       double score_threshold, int64_t max_detections);

// Runs the model over a split and scores it.
EvalReport evaluate(const FullModel<float>& model, const LoadedDataset& ds);

}  // namespace fusedet::harness
