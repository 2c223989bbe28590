#include "fusedet/harness/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace fusedet::harness {

double compute_ap(const std::vector<ApImage>& images, double iou_thresh) {
  int64_t total_gt = 0;
  for (const auto& im : images) total_gt += static_cast<int64_t>(im.gts.size());
  if (total_gt == 0) return -1.0;

  struct Entry {
    double score;
    size_t image;
    size_t pred;
  };
  std::vector<Entry> order;
  for (size_t i = 0; i < images.size(); ++i)
    for (size_t p = 0; p < images[i].preds.size(); ++p)
      order.push_back({images[i].preds[p].first, i, p});
  std::stable_sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.pred < b.pred;
  });

  std::vector<std::vector<char>> gt_used(images.size());
  for (size_t i = 0; i < images.size(); ++i) gt_used[i].assign(images[i].gts.size(), 0);

  std::vector<char> is_tp(order.size(), 0);
  for (size_t k = 0; k < order.size(); ++k) {
    const auto& e = order[k];
    const auto& box = images[e.image].preds[e.pred].second;
    double best_iou = iou_thresh;
    int64_t best_gt = -1;
    for (size_t g = 0; g < images[e.image].gts.size(); ++g) {
      if (gt_used[e.image][g]) continue;
      const double v = det::iou(box, images[e.image].gts[g]);
      if (v >= best_iou && (best_gt < 0 || v > best_iou)) {
        best_iou = v;
        best_gt = static_cast<int64_t>(g);
      }
    }
    if (best_gt >= 0) {
      gt_used[e.image][static_cast<size_t>(best_gt)] = 1;
      is_tp[k] = 1;
    }
  }

  // Precision envelope sampled at the 101 COCO recall points.
  std::vector<double> precision(order.size()), recall(order.size());
  int64_t tp = 0;
  for (size_t k = 0; k < order.size(); ++k) {
    tp += is_tp[k];
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    const double target = static_cast<double>(r) / 100.0;
    double best = 0;
    for (size_t k = 0; k < order.size(); ++k)
      if (recall[k] >= target) best = std::max(best, precision[k]);
    // max precision at recall >= target; envelope is monotone so a single
    // backward sweep would do, the direct form keeps the definition obvious
    ap += best;
  }
  return ap / 101.0;
}

namespace {

ConditionMetrics score_subset(const std::vector<const ImageDetections*>& subset,
                              int64_t num_classes) {
  ConditionMetrics m;
  m.images = static_cast<int64_t>(subset.size());
  m.per_class_ap50.assign(static_cast<size_t>(num_classes), -1.0);
  std::vector<double> map_at_thresh;
  for (int t = 0; t < 10; ++t) {
    const double thresh = 0.5 + 0.05 * t;
    double sum = 0;
    int64_t counted = 0;
    for (int64_t c = 0; c < num_classes; ++c) {
      std::vector<ApImage> imgs;
      imgs.reserve(subset.size());
      for (const auto* d : subset) {
        ApImage ai;
        for (const auto& p : d->preds)
          if (p.cls == c) ai.preds.emplace_back(p.score, p.box);
        for (size_t g = 0; g < d->gt.size(); ++g)
          if (d->gt.classes[g] == c) ai.gts.push_back(d->gt.boxes[g]);
        imgs.push_back(std::move(ai));
      }
      const double ap = compute_ap(imgs, thresh);
      if (ap >= 0) {
        sum += ap;
        ++counted;
        if (t == 0) m.per_class_ap50[static_cast<size_t>(c)] = ap;
      }
    }
    map_at_thresh.push_back(counted ? sum / static_cast<double>(counted) : 0.0);
  }
  m.map50 = map_at_thresh[0];
  double s = 0;
  for (double v : map_at_thresh) s += v;
  m.map5095 = s / 10.0;
  return m;
}

}  // namespace

EvalReport make_report(const std::vector<ImageDetections>& images, int64_t num_classes,
                       double score_threshold, int64_t max_detections) {
  EvalReport rep;
  rep.num_classes = num_classes;
  rep.score_threshold = score_threshold;
  rep.max_detections = max_detections;
  std::vector<const ImageDetections*> all;
  std::map<std::string, std::vector<const ImageDetections*>> cond;
  for (const auto& im : images) {
    all.push_back(&im);
    cond[im.condition].push_back(&im);
  }
  rep.overall = score_subset(all, num_classes);
  for (auto& [name, subset] : cond) rep.by_condition[name] = score_subset(subset, num_classes);
  return rep;
}

EvalReport evaluate(const FullModel<float>& model, const LoadedDataset& ds) {
  const auto t0 = std::chrono::steady_clock::now();
  NoGradGuard<float> guard;
  std::vector<ImageDetections> images;
  const int64_t B = model.cfg.batch_size;
  for (int64_t start = 0; start < ds.size(); start += B) {
    std::vector<int64_t> ids;
    for (int64_t i = start; i < std::min(ds.size(), start + B); ++i) ids.push_back(i);
    Tensor<float> imgs, revp;
    std::vector<det::TargetSet> targets;
    ds.fill_batch(ids, &imgs, &revp, &targets);
    auto fwd = model.forward(imgs, revp);
    for (size_t b = 0; b < ids.size(); ++b) {
      const auto& last = fwd.samples[b].layers.back();
      ImageDetections det;
      det.gt = targets[b];
      det.condition = synth::condition_name(ds.entries[static_cast<size_t>(ids[b])].condition);
      std::vector<Prediction> preds;
      const int64_t N = last.logits.dim(0), C = last.logits.dim(1);
      for (int64_t q = 0; q < N; ++q) {
        double best = -1;
        int cls = 0;
        for (int64_t c = 0; c < C; ++c) {
          const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(last.logits.val().at2(q, c))));
          if (p > best) {
            best = p;
            cls = static_cast<int>(c);
          }
        }
        if (best < model.cfg.score_threshold) continue;
        Prediction pr;
        pr.cls = cls;
        pr.score = best;
        for (int k = 0; k < 4; ++k) pr.box[k] = static_cast<double>(last.boxes.val().at2(q, k));
        preds.push_back(pr);
      }
      std::stable_sort(preds.begin(), preds.end(),
                       [](const Prediction& a, const Prediction& b) { return a.score > b.score; });
      if (static_cast<int64_t>(preds.size()) > model.cfg.max_detections)
        preds.resize(static_cast<size_t>(model.cfg.max_detections));
      det.preds = std::move(preds);
      images.push_back(std::move(det));
    }
  }
  EvalReport rep = make_report(images, model.cfg.num_classes, model.cfg.score_threshold,
                               model.cfg.max_detections);
  rep.runtime_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  auto enc = [](const ConditionMetrics& m) {
    nlohmann::json o;
    o["map50"] = m.map50;
    o["map50_95"] = m.map5095;
    o["per_class_ap50"] = m.per_class_ap50;
    o["images"] = m.images;
    return o;
  };
  j["overall"] = enc(overall);
  for (const auto& [name, m] : by_condition) j["conditions"][name] = enc(m);
  j["num_classes"] = num_classes;
  j["runtime_sec"] = runtime_sec;
  j["score_threshold"] = score_threshold;
  j["max_detections"] = max_detections;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-18s %8s %10s %8s\n", "subset", "mAP50", "mAP50-95", "images");
  os << buf;
  auto row = [&](const std::string& name, const ConditionMetrics& m) {
    std::snprintf(buf, sizeof(buf), "%-18s %8.4f %10.4f %8lld\n", name.c_str(), m.map50, m.map5095,
                  static_cast<long long>(m.images));
    os << buf;
  };
  row("all", overall);
  for (const auto& [name, m] : by_condition) row(name, m);
  os << "per-class AP50 (all):";
  for (double v : overall.per_class_ap50) {
    std::snprintf(buf, sizeof(buf), " %.4f", v);
    os << buf;
  }
  os << "\n";
  return os.str();
}

}  // namespace fusedet::harness
