#ifndef DETRACK_SYNTHVID_HPP_
#define DETRACK_SYNTHVID_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "detrack/records.hpp"
#include "detrack/tensor.hpp"

namespace detrack {

// Moving-shape clips: each object is a colored square, disc or triangle
// (class 1, 2, 3) drifting with constant velocity, bouncing off the frame
// border so it never leaves the image. Optional occluders are gray
// distractor rectangles with no ground truth.
struct GenConfig {
  int class_count = 3;  // up to 3 shape kinds
  int objects_per_video = 2;
  int frames = 32;
  int image_size = 48;
  double min_speed = 0.5;   // pixels per frame
  double max_speed = 2.0;
  double jitter = 0.0;      // uniform velocity perturbation per frame
  double scale_change = 0.1;  // relative size oscillation amplitude
  double noise = 0.02;        // background noise level
  double occluder_prob = 0.0; // chance a video carries one distractor
  double min_object_size = 9.0;
  double max_object_size = 16.0;
  // exact velocity override for every object (testing aid)
  std::optional<std::pair<double, double>> fixed_velocity;
};

struct VideoSample {
  std::vector<FeatureMap> frames;                        // H x W x 3, values in [0, 1]
  std::vector<std::vector<AnnotationRecord>> annotations;  // per frame
  std::uint64_t seed = 0;
};

// Deterministic in (config, seed); videos with different seeds are independent.
VideoSample generate(const GenConfig& cfg, std::uint64_t seed);

// Directory layout: frame_%06d.dtt1 plus annotations.jsonl.
void save_video(const VideoSample& v, const std::filesystem::path& dir);
VideoSample load_video(const std::filesystem::path& dir);

}  // namespace detrack

#endif  // DETRACK_SYNTHVID_HPP_
