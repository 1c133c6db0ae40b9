#ifndef DETRACK_PIPELINE_HPP_
#define DETRACK_PIPELINE_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "detrack/evalmap.hpp"
#include "detrack/records.hpp"
#include "detrack/synthvid.hpp"
#include "detrack/toynet.hpp"

namespace detrack::pipeline {

// Every stage writes <out>/run_manifest.json: command, configuration, seeds
// and content hashes of inputs and outputs. Manifests carry no clocks, so a
// repeated run with the same inputs produces byte-identical artifacts.

struct Dataset {
  GenConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::vector<VideoSample> videos;  // empty when loaded annotations-only
};

void generate_dataset(const GenConfig& cfg, int video_count, std::uint64_t seed,
                      const std::filesystem::path& out_dir);
Dataset load_dataset(const std::filesystem::path& dir);
// Same, but skips frame tensors (annotations and manifest only).
Dataset load_dataset_annotations(const std::filesystem::path& dir);

struct TrainArgs {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  ModelConfig model;      // class_count and image_size are taken from the dataset
  TrainConfig train_cfg;
};

struct TrainSummary {
  LossReport holdout_before;
  LossReport holdout_after;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

TrainSummary run_train(const TrainArgs& args);

struct InferenceOutputs {
  std::vector<DetectionRecord> detections;
  std::vector<TrackletRecord> tracklets;
};

// In-memory core (parallel over videos), plus the file-level stage.
InferenceOutputs infer_dataset(const ModelParams& params, const Dataset& data,
                               const InferConfig& cfg);

struct InferArgs {
  std::filesystem::path model_dir;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  InferConfig cfg;
};

void run_infer(const InferArgs& args);

struct LinkSettings {
  double alpha = 0.5;
  bool causal = false;
  bool average_tracked = false;  // per-pair score averaging before linking
  ExtractOptions extract;
};

struct LinkOutputs {
  std::vector<DetectionRecord> detections;  // input detections with tube-boosted scores
  std::vector<TubeRecord> tubes;
};

LinkOutputs link_records(const std::vector<DetectionRecord>& dets,
                         const std::vector<TrackletRecord>& tracklets, int class_count,
                         const LinkSettings& settings);

struct LinkArgs {
  std::filesystem::path detections_path;
  std::filesystem::path tracklets_path;
  std::filesystem::path out_dir;
  int class_count = 0;  // 0: infer from score vector length
  LinkSettings settings;
};

void run_link(const LinkArgs& args);

// Ground truth restricted to frames that carry detections ("processed
// frames"), so strided runs are scored on what they actually looked at.
EvalResult eval_records(const std::vector<DetectionRecord>& dets, const Dataset& data,
                        double iou_thresh = 0.5, bool processed_only = true);

struct EvalArgs {
  std::filesystem::path detections_path;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  double iou_thresh = 0.5;
  bool processed_only = true;
  bool write_pr_curves = false;
};

EvalResult run_eval(const EvalArgs& args);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool passed(double threshold = 1e-4) const { return worst < threshold; }
};

// Finite-difference audit of every differentiable op and of the full network.
GradCheckReport run_gradcheck();

struct PlotArgs {
  std::filesystem::path model_dir;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::vector<int> taus = {1, 2, 4};
  std::vector<double> alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double iou_thresh = 0.5;
};

// Emits map_vs_tau.csv, map_vs_alpha.csv, pr_class_<c>.csv and, when the
// model directory carries one, a copy of loss_curve.csv.
void run_plotdata(const PlotArgs& args);

}  // namespace detrack::pipeline

#endif  // DETRACK_PIPELINE_HPP_
