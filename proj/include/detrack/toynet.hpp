#ifndef DETRACK_TOYNET_HPP_
#define DETRACK_TOYNET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "detrack/linker.hpp"
#include "detrack/objective.hpp"
#include "detrack/synthvid.hpp"
#include "detrack/tensor.hpp"
#include "detrack/tensorops.hpp"

namespace detrack {

// Small fully-convolutional detector over H x W x 3 inputs.
//
// Backbone: four 3x3 conv+relu stages; conv2 and conv4 have stride 2, giving
// a fine scale at stride 2 (x2) and a coarse scale at stride 4 (x4). 1x1
// heads on x4 produce position-sensitive class score maps (k^2 * (C + 1)
// channels) and class-agnostic box regression maps (4k^2). For a frame pair,
// correlation maps are computed at both scales (the fine one subsampled by
// corr_stride so everything lands on the stride-4 grid), stacked with both
// frames' regression maps, and mapped by a 1x1 head to 4k^2 track regression
// maps pooled at first-frame regions.
struct ModelConfig {
  int class_count = 3;
  int k = 3;
  int base_channels = 12;
  int top_channels = 16;
  int max_displacement = 8;  // clamped per scale against image_size
  int corr_stride = 2;
  bool normalize_correlation = true;
  int image_size = 48;  // nominal training resolution
  std::vector<double> anchor_sizes = {9.0, 14.0, 22.0};

  // displacements shrink when a scale's nominal map cannot fit 2d+1 offsets
  int d_fine() const;
  int d_coarse() const;
  int fine_stride() const { return 2; }
  int coarse_stride() const { return 4; }
  int stack_channels() const;
  RoiGrid grid() const { return RoiGrid{k, class_count}; }
};

struct ModelParams {
  ModelConfig config;
  ConvKernel conv1, conv2, conv3, conv4;    // 3x3 backbone
  ConvKernel cls_head, reg_head, tra_head;  // 1x1 heads

  std::vector<std::pair<std::string, ConvKernel*>> tensors();
  std::vector<std::pair<std::string, const ConvKernel*>> tensors() const;
};

// Backbone convs use a fan-in scaled init; heads start near zero so an
// untrained net scores classes almost uniformly.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

struct FrameTrunk {
  FeatureMap x1p, x1, x2p, x2, x3p, x3, x4p, x4;  // p = pre-activation
  FeatureMap cls, reg;
};

struct PairCoupling {
  CorrelationMap corr_fine, corr_coarse;
  FeatureMap stack;
  FeatureMap tra;
};

struct PairTrunk {
  FrameTrunk a, b;
  PairCoupling pair;
};

FrameTrunk run_frame_trunk(const ModelParams& params, const FeatureMap& image);
PairCoupling run_pair_coupling(const ModelParams& params, const FrameTrunk& a,
                               const FrameTrunk& b);
PairTrunk run_pair_trunk(const ModelParams& params, const FeatureMap& image_a,
                         const FeatureMap& image_b);

// Image-space box -> feature-map cells at the given stride.
Box roi_to_cells(const Box& roi, int stride);

std::vector<double> pool_class_probs(const ModelParams& params, const FeatureMap& cls_map,
                                     const Box& roi_image);
BoxDelta pool_box_delta(const ModelParams& params, const FeatureMap& reg_map,
                        const Box& roi_image);
TrackDelta pool_track_delta(const ModelParams& params, const FeatureMap& tra_map,
                            const Box& roi_image);

// Pools predictions for every RoI and track target of the batch.
BatchPredictions pool_predictions(const ModelParams& params, const PairTrunk& trunk,
                                  const RoiBatch& batch);

struct PairForward {
  PairTrunk trunk;
  BatchPredictions preds;
};

PairForward forward_pair(const ModelParams& params, const FeatureMap& image_a,
                         const FeatureMap& image_b, const RoiBatch& batch);

struct ParamGrads {
  ConvKernel conv1, conv2, conv3, conv4, cls_head, reg_head, tra_head;

  explicit ParamGrads(const ModelParams& like);
  std::vector<ConvKernel*> tensors();
  void scale(double s);
};

// Hand-written reverse pass for the full pair forward; accumulates into grads.
void backward_pair(const ModelParams& params, const FeatureMap& image_a,
                   const FeatureMap& image_b, const RoiBatch& batch, const PairForward& fwd,
                   const PredictionGrads& pgrads, ParamGrads& grads);

// Anchor-grid proposals scored by 1 - background probability of the
// position-sensitive class maps; plain NMS then top_k, clipped to the image.
std::vector<Box> propose(const ModelParams& params, const FrameTrunk& trunk, int image_h,
                         int image_w, int top_k, double nms_iou = 0.7);
std::vector<Box> propose(const ModelParams& params, const FeatureMap& image, int top_k = 64,
                         double nms_iou = 0.7);

struct TrainConfig {
  int iterations = 2000;
  int batch_pairs = 1;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double lr_drop_fraction = 2.0 / 3.0;  // afterwards lr is divided by 10
  int proposals_per_frame = 24;
  double still_pair_prob = 0.5;  // chance of duplicating one frame as the pair
  bool use_track_loss = true;
  double lambda = 1.0;
  double holdout_fraction = 0.2;  // trailing videos reserved for the loss check
  std::uint64_t seed = 1;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossReport> curve;
  LossReport holdout_before;  // fixed held-out batch, untrained parameters
  LossReport holdout_after;
};

// SGD with momentum on the joint loss; throws if the loss turns non-finite.
TrainResult train(const std::vector<VideoSample>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& tcfg);

struct InferConfig {
  int temporal_stride = 1;
  int proposals_per_frame = 64;
  double proposal_nms_iou = 0.7;
  double nms_iou = 0.3;
  int nms_keep = 25;
};

struct VideoInference {
  std::vector<int> processed_frames;
  std::vector<Detection> detections;
  std::vector<Tracklet> tracklets;
};

// Runs frames 0, tau, 2*tau, ...; detections per processed frame (per-class
// suppression with voting already applied), tracklets between consecutive
// processed frames pooled at the regressed detection boxes.
VideoInference infer_video(const ModelParams& params, const VideoSample& video,
                           const InferConfig& cfg);

void save_model(const ModelParams& params, const std::filesystem::path& dir);
ModelParams load_model(const std::filesystem::path& dir);

}  // namespace detrack

#endif  // DETRACK_TOYNET_HPP_
