#include "detrack/evalmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace detrack {

double average_precision(const std::vector<ScoredBox>& dets, const std::vector<GtInstance>& gts,
                         double iou_thresh, std::vector<PrPoint>* curve) {
  if (curve) curve->clear();
  if (gts.empty()) return std::numeric_limits<double>::quiet_NaN();

  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  // stable: equal scores stay in input order
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });

  std::vector<char> claimed(gts.size(), 0);
  std::vector<char> is_tp(dets.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const ScoredBox& d = dets[order[oi]];
    double best = -1.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].group != d.group) continue;
      const double ov = iou(d.box, gts[g].box);
      if (ov < iou_thresh) continue;
      if (ov > best) {  // strict: equal overlaps keep the lowest ground-truth index
        best = ov;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0) {
      claimed[best_gt] = 1;
      is_tp[oi] = 1;
    }
  }

  const double total_gt = static_cast<double>(gts.size());
  std::vector<double> recall(order.size());
  std::vector<double> precision(order.size());
  int tp = 0;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    tp += is_tp[oi];
    recall[oi] = tp / total_gt;
    precision[oi] = static_cast<double>(tp) / static_cast<double>(oi + 1);
  }

  if (curve) {
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      curve->push_back({recall[oi], precision[oi], dets[order[oi]].score});
    }
  }

  // area under the precision envelope (all-points interpolation)
  std::vector<double> envelope(order.size());
  double env = 0.0;
  for (std::size_t oi = order.size(); oi-- > 0;) {
    env = std::max(env, precision[oi]);
    envelope[oi] = env;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    if (!is_tp[oi]) continue;
    ap += (recall[oi] - prev_recall) * envelope[oi];
    prev_recall = recall[oi];
  }
  return ap;
}

EvalResult evaluate(const std::vector<EvalDetection>& dets,
                    const std::vector<EvalGroundTruth>& gts, int class_count,
                    double iou_thresh) {
  if (class_count < 1) throw std::invalid_argument("evaluate: class_count must be positive");

  // one group id per (video, frame)
  std::map<std::pair<std::string, int>, int> groups;
  auto group_of = [&groups](const std::string& video, int frame) {
    return groups.emplace(std::make_pair(video, frame), static_cast<int>(groups.size()))
        .first->second;
  };

  EvalResult res;
  double ap_sum = 0.0;
  int ap_classes = 0;
  for (int c = 1; c <= class_count; ++c) {
    std::vector<ScoredBox> class_dets;
    for (const EvalDetection& d : dets) {
      if (c >= static_cast<int>(d.class_scores.size())) {
        throw std::invalid_argument("evaluate: detection score vector too short");
      }
      class_dets.push_back({d.box, d.class_scores[c], group_of(d.video, d.frame)});
    }
    std::vector<GtInstance> class_gts;
    for (const EvalGroundTruth& g : gts) {
      if (g.cls != c) continue;
      class_gts.push_back({g.box, group_of(g.video, g.frame)});
    }
    ClassEval ce;
    ce.gt_count = static_cast<int>(class_gts.size());
    ce.det_count = static_cast<int>(class_dets.size());
    ce.ap = average_precision(class_dets, class_gts, iou_thresh, &ce.curve);
    if (ce.gt_count > 0) {
      ap_sum += ce.ap;
      ++ap_classes;
    }
    res.per_class[c] = std::move(ce);
  }
  res.mean_ap = ap_classes > 0 ? ap_sum / ap_classes : 0.0;
  return res;
}

}  // namespace detrack
