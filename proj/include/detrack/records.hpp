#ifndef DETRACK_RECORDS_HPP_
#define DETRACK_RECORDS_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "detrack/geometry.hpp"

namespace detrack {

// JSON-lines wire formats shared by the pipeline stages. One record per line:
//   detection  {"video", "frame", "class_scores": [...], "box": [x,y,w,h]}
//   tracklet   {"video", "frame", "stride", "box_t": [...], "box_next": [...],
//               "delta": [dx,dy,dw,dh]}
//   tube       {"video", "class", "score", "frames": [...], "boxes": [[...]...],
//               "scores": [...]}
//   annotation {"frame", "class", "track_id", "box": [x,y,w,h]}

struct DetectionRecord {
  std::string video;
  int frame = 0;
  std::vector<double> class_scores;
  Box box;
};

struct TrackletRecord {
  std::string video;
  int frame = 0;
  int stride = 1;
  Box box_t;
  Box box_next;
  TrackDelta delta;
};

struct TubeRecord {
  std::string video;
  int cls = 0;
  double score = 0.0;
  std::vector<int> frames;
  std::vector<Box> boxes;
  std::vector<double> scores;  // per-frame class score, after any rescoring
};

struct AnnotationRecord {
  int frame = 0;
  int cls = 0;
  int track_id = 0;
  Box box;
};

void write_detections(const std::filesystem::path& p, const std::vector<DetectionRecord>& v);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& p);

void write_tracklets(const std::filesystem::path& p, const std::vector<TrackletRecord>& v);
std::vector<TrackletRecord> read_tracklets(const std::filesystem::path& p);

void write_tubes(const std::filesystem::path& p, const std::vector<TubeRecord>& v);
std::vector<TubeRecord> read_tubes(const std::filesystem::path& p);

void write_annotations(const std::filesystem::path& p, const std::vector<AnnotationRecord>& v);
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& p);

}  // namespace detrack

#endif  // DETRACK_RECORDS_HPP_
