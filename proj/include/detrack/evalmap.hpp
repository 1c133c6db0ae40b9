#ifndef DETRACK_EVALMAP_HPP_
#define DETRACK_EVALMAP_HPP_

#include <map>
#include <string>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

// One class's detection pool. `group` identifies the image a box lives in
// (e.g. an index assigned per (video, frame)); matching never crosses groups.
struct ScoredBox {
  Box box;
  double score = 0.0;
  int group = 0;
};

struct GtInstance {
  Box box;
  int group = 0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;
};

// VOC-style average precision: detections sorted by descending score (input
// order on ties), each matching at most one still-unmatched ground truth of
// its group with IoU >= iou_thresh (highest IoU wins, then lowest index);
// duplicates count as false positives. The summary is the area under the
// precision envelope over all recall points. Zero ground truth returns NaN.
double average_precision(const std::vector<ScoredBox>& dets, const std::vector<GtInstance>& gts,
                         double iou_thresh = 0.5, std::vector<PrPoint>* curve = nullptr);

struct ClassEval {
  double ap = 0.0;
  int gt_count = 0;
  int det_count = 0;
  std::vector<PrPoint> curve;
};

struct EvalResult {
  std::map<int, ClassEval> per_class;
  double mean_ap = 0.0;  // over classes with at least one ground-truth instance
};

struct EvalDetection {
  std::string video;
  int frame = 0;
  Box box;
  std::vector<double> class_scores;  // class_count + 1, background first
};

struct EvalGroundTruth {
  std::string video;
  int frame = 0;
  int cls = 0;
  Box box;
};

// Pools detections across videos per class; every detection record
// contributes one scored box per foreground class.
EvalResult evaluate(const std::vector<EvalDetection>& dets,
                    const std::vector<EvalGroundTruth>& gts, int class_count,
                    double iou_thresh = 0.5);

}  // namespace detrack

#endif  // DETRACK_EVALMAP_HPP_
