#include "detrack/records.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace detrack {

namespace {

using nlohmann::json;

json box_to_json(const Box& b) { return json::array({b.x, b.y, b.w, b.h}); }

Box box_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 4 || !j[0].is_number() || !j[1].is_number() ||
      !j[2].is_number() || !j[3].is_number()) {
    throw std::runtime_error(std::string("records: ") + what + " is not a [x,y,w,h] array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

TrackDelta delta_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 4) {
    throw std::runtime_error(std::string("records: ") + what + " is not a 4-array");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

const json& field(const json& j, const char* name, int line) {
  auto it = j.find(name);
  if (it == j.end()) {
    throw std::runtime_error("records: line " + std::to_string(line) + " missing field '" +
                             name + "'");
  }
  return *it;
}

template <class Fn>
void for_each_line(const std::filesystem::path& p, Fn&& fn) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("records: cannot open " + p.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("records: " + p.string() + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
    fn(j, lineno);
  }
}

void dump_lines(const std::filesystem::path& p, const std::vector<json>& lines) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("records: cannot write " + p.string());
  for (const json& j : lines) out << j.dump() << '\n';
  if (!out) throw std::runtime_error("records: short write to " + p.string());
}

}  // namespace

void write_detections(const std::filesystem::path& p, const std::vector<DetectionRecord>& v) {
  std::vector<json> lines;
  lines.reserve(v.size());
  for (const auto& d : v) {
    lines.push_back({{"video", d.video},
                     {"frame", d.frame},
                     {"class_scores", d.class_scores},
                     {"box", box_to_json(d.box)}});
  }
  dump_lines(p, lines);
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& p) {
  std::vector<DetectionRecord> out;
  for_each_line(p, [&](const json& j, int line) {
    DetectionRecord d;
    d.video = field(j, "video", line).get<std::string>();
    d.frame = field(j, "frame", line).get<int>();
    const json& s = field(j, "class_scores", line);
    if (!s.is_array() || s.empty()) {
      throw std::runtime_error("records: line " + std::to_string(line) + " bad class_scores");
    }
    d.class_scores = s.get<std::vector<double>>();
    d.box = box_from_json(field(j, "box", line), "box");
    out.push_back(std::move(d));
  });
  return out;
}

void write_tracklets(const std::filesystem::path& p, const std::vector<TrackletRecord>& v) {
  std::vector<json> lines;
  lines.reserve(v.size());
  for (const auto& t : v) {
    lines.push_back({{"video", t.video},
                     {"frame", t.frame},
                     {"stride", t.stride},
                     {"box_t", box_to_json(t.box_t)},
                     {"box_next", box_to_json(t.box_next)},
                     {"delta", json::array({t.delta.dx, t.delta.dy, t.delta.dw, t.delta.dh})}});
  }
  dump_lines(p, lines);
}

std::vector<TrackletRecord> read_tracklets(const std::filesystem::path& p) {
  std::vector<TrackletRecord> out;
  for_each_line(p, [&](const json& j, int line) {
    TrackletRecord t;
    t.video = field(j, "video", line).get<std::string>();
    t.frame = field(j, "frame", line).get<int>();
    t.stride = field(j, "stride", line).get<int>();
    if (t.stride < 1) {
      throw std::runtime_error("records: line " + std::to_string(line) + " bad stride");
    }
    t.box_t = box_from_json(field(j, "box_t", line), "box_t");
    t.box_next = box_from_json(field(j, "box_next", line), "box_next");
    t.delta = delta_from_json(field(j, "delta", line), "delta");
    out.push_back(std::move(t));
  });
  return out;
}

void write_tubes(const std::filesystem::path& p, const std::vector<TubeRecord>& v) {
  std::vector<json> lines;
  lines.reserve(v.size());
  for (const auto& t : v) {
    json boxes = json::array();
    for (const Box& b : t.boxes) boxes.push_back(box_to_json(b));
    lines.push_back({{"video", t.video},
                     {"class", t.cls},
                     {"score", t.score},
                     {"frames", t.frames},
                     {"boxes", boxes},
                     {"scores", t.scores}});
  }
  dump_lines(p, lines);
}

std::vector<TubeRecord> read_tubes(const std::filesystem::path& p) {
  std::vector<TubeRecord> out;
  for_each_line(p, [&](const json& j, int line) {
    TubeRecord t;
    t.video = field(j, "video", line).get<std::string>();
    t.cls = field(j, "class", line).get<int>();
    t.score = field(j, "score", line).get<double>();
    t.frames = field(j, "frames", line).get<std::vector<int>>();
    for (const json& b : field(j, "boxes", line)) t.boxes.push_back(box_from_json(b, "boxes[]"));
    t.scores = field(j, "scores", line).get<std::vector<double>>();
    if (t.frames.size() != t.boxes.size() || t.frames.size() != t.scores.size()) {
      throw std::runtime_error("records: line " + std::to_string(line) +
                               " tube arrays disagree in length");
    }
    out.push_back(std::move(t));
  });
  return out;
}

void write_annotations(const std::filesystem::path& p, const std::vector<AnnotationRecord>& v) {
  std::vector<json> lines;
  lines.reserve(v.size());
  for (const auto& a : v) {
    lines.push_back({{"frame", a.frame},
                     {"class", a.cls},
                     {"track_id", a.track_id},
                     {"box", box_to_json(a.box)}});
  }
  dump_lines(p, lines);
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& p) {
  std::vector<AnnotationRecord> out;
  for_each_line(p, [&](const json& j, int line) {
    AnnotationRecord a;
    a.frame = field(j, "frame", line).get<int>();
    a.cls = field(j, "class", line).get<int>();
    a.track_id = field(j, "track_id", line).get<int>();
    if (a.cls < 1) throw std::runtime_error("records: line " + std::to_string(line) + " bad class");
    a.box = box_from_json(field(j, "box", line), "box");
    out.push_back(std::move(a));
  });
  return out;
}

}  // namespace detrack
