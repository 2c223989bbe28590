#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fusedet/harness/metrics.hpp"

using namespace fusedet;
using namespace fusedet::harness;

namespace {

// Independent AP oracle: its own greedy matcher plus an exhaustive sweep over
// score thresholds for the 101-point interpolated precision envelope.
double ap_oracle(const std::vector<ApImage>& images, double iou_thresh) {
  int64_t total_gt = 0;
  for (const auto& im : images) total_gt += static_cast<int64_t>(im.gts.size());
  if (total_gt == 0) return -1.0;

  struct Det {
    double score;
    bool tp;
  };
  std::vector<Det> dets;
  for (const auto& im : images) {
    // Sort this image's predictions by (score desc, index asc).
    std::vector<size_t> order(im.preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return im.preds[a].first > im.preds[b].first;
    });
    std::vector<char> used(im.gts.size(), 0);
    for (size_t k : order) {
      double best = -1;
      int64_t pick = -1;
      for (size_t g = 0; g < im.gts.size(); ++g) {
        if (used[g]) continue;
        const double v = det::iou(im.preds[k].second, im.gts[g]);
        if (v >= iou_thresh && v > best) {
          best = v;
          pick = static_cast<int64_t>(g);
        }
      }
      if (pick >= 0) used[static_cast<size_t>(pick)] = 1;
      dets.push_back({im.preds[k].first, pick >= 0});
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Det& a, const Det& b) { return a.score > b.score; });
  // All distinct thresholds (one per detection prefix).
  double ap = 0;
  for (int r = 0; r <= 100; ++r) {
    const double target = static_cast<double>(r) / 100.0;
    double best_prec = 0;
    int64_t tp = 0;
    for (size_t k = 0; k < dets.size(); ++k) {
      tp += dets[k].tp ? 1 : 0;
      const double recall = static_cast<double>(tp) / static_cast<double>(total_gt);
      const double prec = static_cast<double>(tp) / static_cast<double>(k + 1);
      if (recall >= target) best_prec = std::max(best_prec, prec);
    }
    ap += best_prec;
  }
  return ap / 101.0;
}

det::Box shift(const det::Box& b, double dx) { return {b[0] + dx, b[1], b[2], b[3]}; }

}  // namespace

TEST_CASE("AP: perfect single detection scores 1.0") {
  ApImage im;
  im.gts = {{0.5, 0.5, 0.2, 0.2}};
  im.preds = {{0.9, {0.5, 0.5, 0.2, 0.2}}};
  CHECK(compute_ap({im}, 0.5) == doctest::Approx(1.0));
}

TEST_CASE("AP: false positive above a true positive halves precision") {
  ApImage im;
  im.gts = {{0.5, 0.5, 0.2, 0.2}};
  im.preds = {{0.9, {0.1, 0.1, 0.05, 0.05}}, {0.8, {0.5, 0.5, 0.2, 0.2}}};
  CHECK(compute_ap({im}, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("AP: missing one of two ground truths caps recall at one half") {
  ApImage im;
  im.gts = {{0.3, 0.3, 0.2, 0.2}, {0.7, 0.7, 0.2, 0.2}};
  im.preds = {{0.9, {0.3, 0.3, 0.2, 0.2}}};
  CHECK(compute_ap({im}, 0.5) == doctest::Approx(51.0 / 101.0));
}

TEST_CASE("AP equals the exhaustive-threshold oracle on random micro-instances") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<ApImage> images(1 + rng.uniform_int(3));
    for (auto& im : images) {
      const int ngt = static_cast<int>(rng.uniform_int(4));
      for (int g = 0; g < ngt; ++g)
        im.gts.push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3),
                          rng.uniform(0.05, 0.3)});
      const int np = static_cast<int>(rng.uniform_int(7));
      for (int p = 0; p < np; ++p) {
        det::Box b;
        if (!im.gts.empty() && rng.bernoulli(0.6))
          b = shift(im.gts[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(im.gts.size())))],
                    rng.uniform(-0.1, 0.1));
        else
          b = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.3),
               rng.uniform(0.05, 0.3)};
        im.preds.emplace_back(rng.uniform(), b);
      }
    }
    const double got = compute_ap(images, 0.5);
    const double want = ap_oracle(images, 0.5);
    if (want < 0)
      CHECK(got < 0);
    else
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("hand-computed two-image micro dataset") {
  ApImage im1, im2;
  im1.gts = {{0.3, 0.3, 0.2, 0.2}};
  im1.preds = {{0.9, {0.3, 0.3, 0.2, 0.2}}, {0.8, {0.8, 0.8, 0.1, 0.1}}};
  im2.gts = {{0.6, 0.6, 0.2, 0.2}};
  const double iou_shift = det::iou({0.6, 0.6, 0.2, 0.2}, {0.65, 0.6, 0.2, 0.2});
  REQUIRE(iou_shift == doctest::Approx(0.6).epsilon(0.01));
  im2.preds = {{0.7, {0.65, 0.6, 0.2, 0.2}}};
  // order: 0.9 TP, 0.8 FP, 0.7 TP -> precisions (1, 1/2, 2/3), recalls (.5, .5, 1)
  const double ap50 = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  CHECK(compute_ap({im1, im2}, 0.5) == doctest::Approx(ap50).epsilon(1e-12));
  // at IoU 0.75 the shifted prediction turns FP: recall caps at 0.5
  CHECK(compute_ap({im1, im2}, 0.75) == doctest::Approx(51.0 / 101.0).epsilon(1e-12));
}

TEST_CASE("report: perfect oracle predictions give mAP50 = mAP50-95 = 1") {
  Rng rng(7);
  std::vector<ImageDetections> images;
  for (int i = 0; i < 6; ++i) {
    ImageDetections d;
    d.condition = i % 2 ? "normal" : "adverse_weather";
    const int ngt = 1 + static_cast<int>(rng.uniform_int(3));
    for (int g = 0; g < ngt; ++g) {
      det::Box b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.2),
                 rng.uniform(0.1, 0.2)};
      const int cls = static_cast<int>(rng.uniform_int(3));
      d.gt.boxes.push_back(b);
      d.gt.classes.push_back(cls);
      d.preds.push_back({cls, 1.0, b});
    }
    images.push_back(std::move(d));
  }
  auto rep = make_report(images, 3, 0.05, 30);
  CHECK(rep.overall.map50 == doctest::Approx(1.0));
  CHECK(rep.overall.map5095 == doctest::Approx(1.0));
  CHECK(rep.by_condition.count("normal"));
  CHECK(rep.by_condition.count("adverse_weather"));
  CHECK(rep.by_condition["normal"].map50 == doctest::Approx(1.0));

  for (auto& im : images) im.preds.clear();
  auto rep0 = make_report(images, 3, 0.05, 30);
  CHECK(rep0.overall.map50 == doctest::Approx(0.0));
}

TEST_CASE("mAP50-95 never exceeds mAP50") {
  Rng rng(11);
  for (int t = 0; t < 30; ++t) {
    std::vector<ImageDetections> images;
    for (int i = 0; i < 4; ++i) {
      ImageDetections d;
      d.condition = "normal";
      const int ngt = 1 + static_cast<int>(rng.uniform_int(3));
      for (int g = 0; g < ngt; ++g) {
        det::Box b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.25),
                   rng.uniform(0.1, 0.25)};
        const int cls = static_cast<int>(rng.uniform_int(2));
        d.gt.boxes.push_back(b);
        d.gt.classes.push_back(cls);
        if (rng.bernoulli(0.8))
          d.preds.push_back({cls, rng.uniform(0.3, 1.0), shift(b, rng.uniform(-0.06, 0.06))});
      }
      if (rng.bernoulli(0.5))
        d.preds.push_back({static_cast<int>(rng.uniform_int(2)), rng.uniform(),
                           {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1}});
      images.push_back(std::move(d));
    }
    auto rep = make_report(images, 2, 0.05, 30);
    CHECK(rep.overall.map5095 <= rep.overall.map50 + 1e-12);
  }
}

TEST_CASE("classes with no ground truth are excluded from the mean") {
  ImageDetections d;
  d.condition = "normal";
  d.gt.boxes = {{0.5, 0.5, 0.2, 0.2}};
  d.gt.classes = {0};
  d.preds = {{0, 1.0, {0.5, 0.5, 0.2, 0.2}}, {2, 0.9, {0.3, 0.3, 0.1, 0.1}}};
  auto rep = make_report({d}, 3, 0.05, 30);
  CHECK(rep.overall.map50 == doctest::Approx(1.0));  // class 2 has no GT anywhere
  CHECK(rep.overall.per_class_ap50[0] == doctest::Approx(1.0));
  CHECK(rep.overall.per_class_ap50[2] == doctest::Approx(-1.0));
}
