#ifndef DETRACK_LINKER_HPP_
#define DETRACK_LINKER_HPP_

#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

struct Detection {
  int frame = 0;
  Box box;
  std::vector<double> scores;  // softmax over class_count + 1, index 0 = background
};

// Cross-frame correspondence: box_t at `frame`, box_next `stride` frames later.
struct Tracklet {
  int frame = 0;
  int stride = 1;
  Box box_t;
  Box box_next;
};

struct Tube {
  int cls = 0;
  std::vector<Detection> detections;  // one per processed frame, in frame order
  double score = 0.0;                 // mean pairwise linking score along the path
};

// Greedy per-class suppression at iou > iou_thresh, keeping at most `keep`
// survivors. A survivor's coordinates become the score-weighted average of
// its cluster (itself plus everything it suppressed); scores are untouched.
std::vector<Detection> nms_with_voting(const std::vector<Detection>& dets, int cls,
                                       double iou_thresh = 0.3, int keep = 25);

// scores[cls] of both detections plus 1 if the tracklet ties them together
// (IoU > 0.5 at both ends). Frames must match the tracklet's endpoints.
double pair_score(const Detection& a, const Detection& b, const Tracklet& t, int cls);

// Highest-scoring path through per-frame detection lists, maximizing the mean
// pairwise score; exact dynamic program, ties resolved toward the
// lexicographically smallest index sequence. tracklets[i] connects frames[i]
// to frames[i+1]. A frame with no detections is an error.
Tube viterbi_link(const std::vector<std::vector<Detection>>& frames,
                  const std::vector<std::vector<Tracklet>>& tracklets, int cls);

struct ExtractOptions {
  int max_tubes = 20;
  double min_mean_prob = 1e-3;  // stop once the best path's mean class score drops below
};

// Repeats viterbi_link, removing each tube's detections before the next pass,
// until a frame empties, max_tubes is reached, or the stop threshold hits.
std::vector<Tube> extract_tubes(std::vector<std::vector<Detection>> frames,
                                const std::vector<std::vector<Tracklet>>& tracklets, int cls,
                                const ExtractOptions& opt = {});

// Adds the mean of the top ceil(alpha * n) class scores to every member's
// class score (n = tube length). The causal variant uses, at each position,
// only the scores seen so far.
Tube rescore_tube(const Tube& tube, double alpha = 0.5, bool causal = false);

// For each detection at frame t with a tracklet attached (IoU > iou_thresh at
// box_t), averages its class scores with those of the best-matching detection
// at the tracked box in the next processed frame. No match leaves it unchanged.
std::vector<Detection> average_tracked_scores(const std::vector<Detection>& dets_t,
                                              const std::vector<Tracklet>& tracklets,
                                              const std::vector<Detection>& dets_next,
                                              double iou_thresh = 0.5);

}  // namespace detrack

#endif  // DETRACK_LINKER_HPP_
