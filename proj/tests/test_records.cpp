#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include "detrack/records.hpp"

using namespace detrack;
namespace fs = std::filesystem;

namespace {

fs::path scratch_file(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "detrack_records_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_lines(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("detection records survive a write and read") {
  std::vector<DetectionRecord> v;
  v.push_back({"vid_000", 3, {0.125, 0.5, 0.375}, Box{10.5, -2.25, 8.0, 3.75}});
  v.push_back({"vid_001", 0, {1.0 / 3.0, 2.0 / 3.0}, Box{0.1, 0.2, 0.3, 0.4}});
  const fs::path p = scratch_file("dets.jsonl");
  write_detections(p, v);
  const auto back = read_detections(p);
  REQUIRE(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(back[i].video == v[i].video);
    CHECK(back[i].frame == v[i].frame);
    CHECK(back[i].class_scores == v[i].class_scores);  // exact: doubles roundtrip
    CHECK(back[i].box.x == v[i].box.x);
    CHECK(back[i].box.h == v[i].box.h);
  }
}

TEST_CASE("tracklet records survive a write and read") {
  std::vector<TrackletRecord> v;
  TrackletRecord t;
  t.video = "vid_002";
  t.frame = 5;
  t.stride = 2;
  t.box_t = {10, 10, 8, 8};
  t.box_next = {12.5, 10.25, 8, 8};
  t.delta = {0.3125, 0.03125, 0.0, -0.125};
  v.push_back(t);
  const fs::path p = scratch_file("tracklets.jsonl");
  write_tracklets(p, v);
  const auto back = read_tracklets(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0].video == "vid_002");
  CHECK(back[0].stride == 2);
  CHECK(back[0].box_next.x == 12.5);
  CHECK(back[0].delta.dx == 0.3125);
  CHECK(back[0].delta.dh == -0.125);
}

TEST_CASE("tube records survive a write and read") {
  std::vector<TubeRecord> v;
  TubeRecord t;
  t.video = "vid_003";
  t.cls = 2;
  t.score = 1.375;
  t.frames = {0, 2, 4};
  t.boxes = {{10, 10, 8, 8}, {12, 10, 8, 8}, {14, 10, 8, 8}};
  t.scores = {0.9, 0.8, 0.7};
  v.push_back(t);
  const fs::path p = scratch_file("tubes.jsonl");
  write_tubes(p, v);
  const auto back = read_tubes(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0].cls == 2);
  CHECK(back[0].score == 1.375);
  CHECK(back[0].frames == std::vector<int>{0, 2, 4});
  REQUIRE(back[0].boxes.size() == 3);
  CHECK(back[0].boxes[2].x == 14);
  CHECK(back[0].scores == std::vector<double>{0.9, 0.8, 0.7});
}

TEST_CASE("annotation records survive a write and read") {
  std::vector<AnnotationRecord> v = {{0, 1, 7, {10, 10, 8, 8}}, {1, 2, 9, {20, 20, 6, 6}}};
  const fs::path p = scratch_file("anno.jsonl");
  write_annotations(p, v);
  const auto back = read_annotations(p);
  REQUIRE(back.size() == 2);
  CHECK(back[1].cls == 2);
  CHECK(back[1].track_id == 9);
  CHECK(back[1].box.y == 20);
}

TEST_CASE("empty files read back as empty lists") {
  const fs::path p = scratch_file("empty.jsonl");
  write_detections(p, {});
  CHECK(read_detections(p).empty());
  CHECK(read_tracklets(p).empty());
}

TEST_CASE("malformed lines are reported as errors") {
  const fs::path p = scratch_file("bad.jsonl");
  write_lines(p, "{\"video\": \"v\", \"frame\": 0, \"class_scores\": [0.5], \"box\": [1,2,3,4]}\nnot json\n");
  CHECK_THROWS(read_detections(p));

  write_lines(p, "{\"video\": \"v\", \"frame\": 0}\n");  // box missing
  CHECK_THROWS(read_detections(p));

  write_lines(p, "{\"video\": \"v\", \"frame\": 0, \"class_scores\": [0.5], \"box\": [1,2,3]}\n");
  CHECK_THROWS(read_detections(p));  // box needs four numbers

  CHECK_THROWS(read_detections(scratch_file("missing.jsonl")));
}
