#ifndef DETRACK_OBJECTIVE_HPP_
#define DETRACK_OBJECTIVE_HPP_

#include <array>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

struct GtBox {
  Box box;
  int cls = 0;       // 1..C, 0 is reserved for background
  int track_id = 0;  // stable within a video
};

struct RoiAssignment {
  int frame = 0;  // 0 = first frame of the pair, 1 = second
  Box roi;
  int label = 0;        // assigned class, 0 = background
  BoxDelta box_target;  // defined only for label > 0
};

// Inter-frame regression target for one object present in both frames.
// The pooling region is the first frame's ground-truth box.
struct TrackTarget {
  Box roi;
  TrackDelta delta;
  int cls = 0;
  int track_id = 0;
};

struct RoiBatch {
  std::vector<RoiAssignment> rois;
  std::vector<TrackTarget> tracks;

  int total() const { return static_cast<int>(rois.size()); }
  int foreground() const;
  int tracked() const { return static_cast<int>(tracks.size()); }
};

struct AssignOptions {
  double iou_threshold = 0.5;
  // When set, every ground-truth box claims its highest-IoU RoI even if the
  // overlap is below the threshold.
  bool force_best_match = true;
};

// Labels RoIs from the two frames of a pair against per-frame ground truth
// (max-IoU rule, ties to the lowest ground-truth index) and builds track
// targets for identities present in both frames.
RoiBatch assign(const std::array<std::vector<Box>, 2>& rois_per_frame,
                const std::array<std::vector<GtBox>, 2>& gt_per_frame,
                const AssignOptions& opt = {});

struct BatchPredictions {
  std::vector<std::vector<double>> class_probs;  // per RoI, size class_count + 1
  std::vector<BoxDelta> box_deltas;              // per RoI
  std::vector<TrackDelta> track_deltas;          // per track target
};

struct LossReport {
  double cls = 0.0;
  double reg = 0.0;
  double tra = 0.0;
  double total = 0.0;
  double lambda = 1.0;
};

// total = cls / N + lambda * (reg / N_fg + tra / N_tra); each normalizer is
// the count of contributing terms and a zero count makes the term vanish.
// cls is -log p at the assigned label, reg and tra are elementwise smooth L1.
LossReport loss(const RoiBatch& batch, const BatchPredictions& preds, double lambda = 1.0);

struct PredictionGrads {
  std::vector<std::vector<double>> class_probs;
  std::vector<BoxDelta> box_deltas;
  std::vector<TrackDelta> track_deltas;
};

PredictionGrads loss_backward(const RoiBatch& batch, const BatchPredictions& preds,
                              double lambda = 1.0);

}  // namespace detrack

#endif  // DETRACK_OBJECTIVE_HPP_
