#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "detrack/evalmap.hpp"
#include "detrack/rng.hpp"

using namespace detrack;

namespace {

ScoredBox sb(Box b, double score, int group = 0) { return {b, score, group}; }
GtInstance gt(Box b, int group = 0) { return {b, group}; }

// Independent reference: replay the matching rule rank by rank, then
// integrate the precision envelope over every distinct recall level reached.
double oracle_ap(std::vector<ScoredBox> dets, const std::vector<GtInstance>& gts,
                 double iou_thresh) {
  if (gts.empty()) return std::nan("");
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::vector<char> taken(gts.size(), 0);
  const int n = static_cast<int>(dets.size());
  std::vector<double> recall(n), prec(n);
  int tp = 0;
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double best_ov = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].group != dets[i].group) continue;
      const double ov = iou(dets[i].box, gts[g].box);
      if (ov >= iou_thresh && ov > best_ov) {
        best_ov = ov;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[best] = 1;
      ++tp;
    }
    recall[i] = static_cast<double>(tp) / static_cast<double>(gts.size());
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  std::vector<double> levels = recall;
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double ap = 0.0, prev = 0.0;
  for (double r : levels) {
    if (r <= 0.0) continue;
    double env = 0.0;
    for (int i = 0; i < n; ++i)
      if (recall[i] >= r) env = std::max(env, prec[i]);
    ap += (r - prev) * env;
    prev = r;
  }
  return ap;
}

}  // namespace

TEST_CASE("two hits around a miss give five sixths") {
  const std::vector<GtInstance> gts = {gt({10, 10, 10, 10}, 0), gt({50, 50, 10, 10}, 1)};
  const std::vector<ScoredBox> dets = {
      sb({10, 10, 10, 10}, 0.9, 0),  // hit
      sb({80, 80, 10, 10}, 0.8, 0),  // miss
      sb({50, 50, 10, 10}, 0.7, 1),  // hit
  };
  std::vector<PrPoint> curve;
  const double ap = average_precision(dets, gts, 0.5, &curve);
  CHECK(std::abs(ap - 5.0 / 6.0) < 1e-9);

  REQUIRE(curve.size() == 3);
  CHECK(curve[0].recall == doctest::Approx(0.5));
  CHECK(curve[0].precision == doctest::Approx(1.0));
  CHECK(curve[0].score == doctest::Approx(0.9));
  CHECK(curve[1].precision == doctest::Approx(0.5));
  CHECK(curve[2].recall == doctest::Approx(1.0));
  CHECK(curve[2].precision == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("a duplicate on an already-claimed box counts as a miss") {
  const std::vector<GtInstance> gts = {gt({10, 10, 10, 10}, 0), gt({50, 50, 10, 10}, 0)};
  const std::vector<ScoredBox> dets = {
      sb({10, 10, 10, 10}, 0.9, 0),
      sb({10, 10, 10, 10}, 0.8, 0),  // same ground truth again
      sb({50, 50, 10, 10}, 0.7, 0),
  };
  CHECK(std::abs(average_precision(dets, gts, 0.5) - 5.0 / 6.0) < 1e-9);
}

TEST_CASE("any order-preserving score rescaling leaves the value unchanged") {
  const std::vector<GtInstance> gts = {gt({10, 10, 10, 10}, 0), gt({50, 50, 10, 10}, 1)};
  std::vector<ScoredBox> dets = {
      sb({10, 10, 10, 10}, 0.9, 0),
      sb({80, 80, 10, 10}, 0.8, 0),
      sb({50, 50, 10, 10}, 0.7, 1),
      sb({90, 20, 10, 10}, 0.2, 1),
  };
  const double base = average_precision(dets, gts, 0.5);
  std::vector<ScoredBox> squared = dets, affine = dets;
  for (auto& d : squared) d.score = d.score * d.score;
  for (auto& d : affine) d.score = 3.0 * d.score + 11.0;
  CHECK(average_precision(squared, gts, 0.5) == base);
  CHECK(average_precision(affine, gts, 0.5) == base);
}

TEST_CASE("low-scoring misses appended at the tail change nothing") {
  const std::vector<GtInstance> gts = {gt({10, 10, 10, 10}, 0), gt({50, 50, 10, 10}, 1)};
  std::vector<ScoredBox> dets = {
      sb({10, 10, 10, 10}, 0.9, 0),
      sb({80, 80, 10, 10}, 0.8, 0),
      sb({50, 50, 10, 10}, 0.7, 1),
  };
  const double base = average_precision(dets, gts, 0.5);
  for (int i = 0; i < 5; ++i) dets.push_back(sb({90, 90, 4, 4}, 0.1 - 0.01 * i, 0));
  CHECK(average_precision(dets, gts, 0.5) == base);
}

TEST_CASE("matching respects the overlap threshold boundary") {
  // centered (5,5) 10x10 vs (5,2.5) 10x5: intersection 50, union 100
  const std::vector<GtInstance> gts = {gt({5, 5, 10, 10}, 0)};
  const std::vector<ScoredBox> dets = {sb({5, 2.5, 10, 5}, 0.9, 0)};
  CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(1.0));
  CHECK(average_precision(dets, gts, 0.5 + 1e-9) == doctest::Approx(0.0));
}

TEST_CASE("matches never cross group boundaries") {
  const std::vector<GtInstance> gts = {gt({10, 10, 10, 10}, 0)};
  const std::vector<ScoredBox> dets = {sb({10, 10, 10, 10}, 0.9, 1)};
  CHECK(average_precision(dets, gts, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("no ground truth at all yields NaN") {
  const std::vector<ScoredBox> dets = {sb({10, 10, 10, 10}, 0.9, 0)};
  CHECK(std::isnan(average_precision(dets, {}, 0.5)));
  CHECK(std::isnan(average_precision({}, {}, 0.5)));
  CHECK(average_precision({}, {gt({10, 10, 10, 10}, 0)}, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("random pools agree with threshold-by-threshold integration") {
  Rng rng(417);
  const double grid[4] = {10, 16, 22, 40};
  for (int trial = 0; trial < 200; ++trial) {
    const int n_gt = rng.uniform_int(0, 5);
    const int n_det = rng.uniform_int(0, 12);
    std::vector<GtInstance> gts;
    std::vector<ScoredBox> dets;
    for (int i = 0; i < n_gt; ++i) {
      gts.push_back(gt({grid[rng.uniform_int(0, 3)], grid[rng.uniform_int(0, 3)], 10, 10},
                       rng.uniform_int(0, 2)));
    }
    // distinct scores so ranking is unambiguous for both implementations
    for (int i = 0; i < n_det; ++i) {
      dets.push_back(sb({grid[rng.uniform_int(0, 3)] + rng.uniform_int(-2, 2),
                         grid[rng.uniform_int(0, 3)] + rng.uniform_int(-2, 2), 10, 10},
                        (rng.uniform_int(0, 4000) * 16 + i) / 64016.0, rng.uniform_int(0, 2)));
    }
    const double got = average_precision(dets, gts, 0.5);
    const double want = oracle_ap(dets, gts, 0.5);
    if (gts.empty()) {
      CHECK(std::isnan(got));
    } else {
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("pooled evaluation splits by class and skips absent classes") {
  std::vector<EvalGroundTruth> gts;
  gts.push_back({"vid_a", 0, 1, {10, 10, 10, 10}});
  gts.push_back({"vid_a", 1, 1, {12, 10, 10, 10}});

  std::vector<EvalDetection> dets;
  dets.push_back({"vid_a", 0, {10, 10, 10, 10}, {0.1, 0.8, 0.1}});
  dets.push_back({"vid_a", 1, {12, 10, 10, 10}, {0.2, 0.7, 0.1}});

  const EvalResult r = evaluate(dets, gts, 2, 0.5);
  REQUIRE(r.per_class.count(1) == 1);
  REQUIRE(r.per_class.count(2) == 1);
  CHECK(r.per_class.at(1).ap == doctest::Approx(1.0));
  CHECK(r.per_class.at(1).gt_count == 2);
  CHECK(std::isnan(r.per_class.at(2).ap));  // no class-2 ground truth anywhere
  CHECK(r.mean_ap == doctest::Approx(1.0));  // mean over classes that exist

  // same frame index in a different video must not satisfy this ground truth
  std::vector<EvalDetection> wrong_video;
  wrong_video.push_back({"vid_b", 0, {10, 10, 10, 10}, {0.1, 0.8, 0.1}});
  wrong_video.push_back({"vid_b", 1, {12, 10, 10, 10}, {0.2, 0.7, 0.1}});
  const EvalResult r2 = evaluate(wrong_video, gts, 2, 0.5);
  CHECK(r2.per_class.at(1).ap == doctest::Approx(0.0));
}
