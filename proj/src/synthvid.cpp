#include "detrack/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "detrack/rng.hpp"

namespace detrack {

namespace {

constexpr double kBorderMargin = 1.0;
constexpr double kBackground = 0.1;

struct ShapeState {
  int cls = 0;  // 0 marks an occluder
  int track_id = -1;
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
  double base_size = 0.0;
  double amp = 0.0, rate = 0.0, phase = 0.0;
  double color[3] = {0.0, 0.0, 0.0};

  double size_at(int t) const { return base_size * (1.0 + amp * std::sin(phase + rate * t)); }
  double max_half() const { return 0.5 * base_size * (1.0 + amp); }
};

void check_config(const GenConfig& cfg) {
  if (cfg.frames < 2) throw std::invalid_argument("synthvid: need at least 2 frames");
  if (cfg.class_count < 1 || cfg.class_count > 3) {
    throw std::invalid_argument("synthvid: class_count must be 1..3");
  }
  if (cfg.objects_per_video < 1) throw std::invalid_argument("synthvid: need at least 1 object");
  if (!(cfg.min_object_size > 0.0) || cfg.max_object_size < cfg.min_object_size) {
    throw std::invalid_argument("synthvid: bad object size range");
  }
  if (cfg.min_speed < 0.0 || cfg.max_speed < cfg.min_speed) {
    throw std::invalid_argument("synthvid: bad speed range");
  }
  if (cfg.scale_change < 0.0 || cfg.scale_change >= 1.0) {
    throw std::invalid_argument("synthvid: scale_change must be in [0, 1)");
  }
  if (cfg.noise < 0.0 || cfg.noise > 0.5) throw std::invalid_argument("synthvid: bad noise level");
  const double max_half = 0.5 * cfg.max_object_size * (1.0 + cfg.scale_change);
  if (cfg.image_size - 2.0 * (kBorderMargin + max_half) <= 0.0) {
    throw std::invalid_argument("synthvid: objects cannot be placed without leaving the frame");
  }
}

bool inside_shape(int cls, double cx, double cy, double half, double px, double py) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (cls) {
    case 2:  // disc
      return dx * dx + dy * dy <= half * half;
    case 3: {  // up-pointing triangle inscribed in the box
      if (dy < -half || dy > half) return false;
      const double frac = (dy + half) / (2.0 * half);  // 0 at apex row, 1 at base
      return std::abs(dx) <= half * frac;
    }
    default:  // square (and occluders)
      return std::abs(dx) <= half && std::abs(dy) <= half;
  }
}

void draw_shape(FeatureMap& img, const ShapeState& s, int t) {
  const double size = s.size_at(t);
  const double half = 0.5 * size;
  const int j0 = std::max(0, static_cast<int>(std::floor(s.x - half)) - 1);
  const int j1 = std::min(img.width - 1, static_cast<int>(std::ceil(s.x + half)) + 1);
  const int i0 = std::max(0, static_cast<int>(std::floor(s.y - half)) - 1);
  const int i1 = std::min(img.height - 1, static_cast<int>(std::ceil(s.y + half)) + 1);
  static const double sub[2] = {0.25, 0.75};
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) {
      int hits = 0;
      for (double oy : sub)
        for (double ox : sub)
          hits += inside_shape(s.cls, s.x, s.y, half, j + ox, i + oy) ? 1 : 0;
      if (hits == 0) continue;
      const double cov = hits / 4.0;
      for (int c = 0; c < 3; ++c) {
        double& px = img.at(i, j, c);
        px = (1.0 - cov) * px + cov * s.color[c];
      }
    }
  }
}

}  // namespace

VideoSample generate(const GenConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  Rng rng(Rng::mix(seed, 0x5e11f1d5u));

  static const double kPalette[3][3] = {
      {0.85, 0.25, 0.20},  // square
      {0.20, 0.80, 0.25},  // disc
      {0.25, 0.35, 0.90},  // triangle
  };

  std::vector<ShapeState> shapes;
  const int class_offset = rng.uniform_int(0, cfg.class_count - 1);
  for (int n = 0; n < cfg.objects_per_video; ++n) {
    ShapeState s;
    s.cls = 1 + (class_offset + n) % cfg.class_count;  // cyclic: classes stay balanced
    s.track_id = n;
    s.base_size = rng.uniform(cfg.min_object_size, cfg.max_object_size);
    s.amp = cfg.scale_change > 0.0 ? rng.uniform(0.25 * cfg.scale_change, cfg.scale_change) : 0.0;
    s.rate = rng.uniform(0.1, 0.4);
    s.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double lo = kBorderMargin + s.max_half();
    const double hi = cfg.image_size - kBorderMargin - s.max_half();
    // spread starting positions out so objects do not begin stacked
    for (int attempt = 0; attempt < 64; ++attempt) {
      s.x = rng.uniform(lo, hi);
      s.y = rng.uniform(lo, hi);
      const Box cand{s.x, s.y, 2.0 * s.max_half(), 2.0 * s.max_half()};
      bool clear = true;
      for (const ShapeState& other : shapes) {
        const Box ob{other.x, other.y, 2.0 * other.max_half(), 2.0 * other.max_half()};
        if (iou(cand, ob) >= 0.3) clear = false;
      }
      if (clear) break;
    }
    if (cfg.fixed_velocity) {
      s.vx = cfg.fixed_velocity->first;
      s.vy = cfg.fixed_velocity->second;
    } else {
      const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
      const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      s.vx = speed * std::cos(angle);
      s.vy = speed * std::sin(angle);
    }
    const double bright = rng.uniform(0.9, 1.05);
    for (int c = 0; c < 3; ++c) {
      s.color[c] = std::clamp(kPalette[s.cls - 1][c] * bright, 0.0, 1.0);
    }
    shapes.push_back(s);
  }
  if (rng.uniform() < cfg.occluder_prob) {
    ShapeState s;
    s.cls = 0;
    s.base_size = rng.uniform(cfg.min_object_size, cfg.max_object_size);
    const double lo = kBorderMargin + s.max_half();
    const double hi = cfg.image_size - kBorderMargin - s.max_half();
    s.x = rng.uniform(lo, hi);
    s.y = rng.uniform(lo, hi);
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    s.color[0] = s.color[1] = s.color[2] = 0.5;
    shapes.push_back(s);
  }

  VideoSample video;
  video.seed = seed;
  for (int t = 0; t < cfg.frames; ++t) {
    FeatureMap img(cfg.image_size, cfg.image_size, 3);
    for (int i = 0; i < img.height; ++i) {
      for (int j = 0; j < img.width; ++j) {
        for (int c = 0; c < 3; ++c) img.at(i, j, c) = kBackground + cfg.noise * rng.uniform();
      }
    }
    std::vector<AnnotationRecord> anns;
    for (const ShapeState& s : shapes) {
      draw_shape(img, s, t);
      if (s.cls == 0) continue;  // occluders carry no ground truth
      const double size = s.size_at(t);
      anns.push_back({t, s.cls, s.track_id, Box{s.x, s.y, size, size}});
    }
    video.frames.push_back(std::move(img));
    video.annotations.push_back(std::move(anns));

    // constant velocity plus optional jitter, reflecting at the border so the
    // full box keeps a 1 px margin at its largest oscillation
    for (ShapeState& s : shapes) {
      double sx = s.vx, sy = s.vy;
      if (cfg.jitter > 0.0) {
        sx += rng.uniform(-cfg.jitter, cfg.jitter);
        sy += rng.uniform(-cfg.jitter, cfg.jitter);
      }
      const double lo = kBorderMargin + s.max_half();
      const double hix = cfg.image_size - kBorderMargin - s.max_half();
      double nx = s.x + sx;
      double ny = s.y + sy;
      if (nx < lo) {
        nx = lo + (lo - nx);
        s.vx = -s.vx;
      } else if (nx > hix) {
        nx = hix - (nx - hix);
        s.vx = -s.vx;
      }
      if (ny < lo) {
        ny = lo + (lo - ny);
        s.vy = -s.vy;
      } else if (ny > hix) {
        ny = hix - (ny - hix);
        s.vy = -s.vy;
      }
      s.x = std::clamp(nx, lo, hix);
      s.y = std::clamp(ny, lo, hix);
    }
  }
  return video;
}

namespace {

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.dtt1", t);
  return buf;
}

}  // namespace

void save_video(const VideoSample& v, const std::filesystem::path& dir) {
  if (v.frames.empty()) throw std::invalid_argument("save_video: empty video");
  std::filesystem::create_directories(dir);
  std::vector<AnnotationRecord> flat;
  for (std::size_t t = 0; t < v.frames.size(); ++t) {
    write_dtt1(dir / frame_name(static_cast<int>(t)), v.frames[t]);
    if (t < v.annotations.size()) {
      flat.insert(flat.end(), v.annotations[t].begin(), v.annotations[t].end());
    }
  }
  write_annotations(dir / "annotations.jsonl", flat);
}

VideoSample load_video(const std::filesystem::path& dir) {
  VideoSample v;
  for (int t = 0;; ++t) {
    const auto p = dir / frame_name(t);
    if (!std::filesystem::exists(p)) break;
    v.frames.push_back(read_dtt1(p));
  }
  if (v.frames.empty()) throw std::runtime_error("load_video: no frames under " + dir.string());
  v.annotations.assign(v.frames.size(), {});
  for (AnnotationRecord& a : read_annotations(dir / "annotations.jsonl")) {
    if (a.frame < 0 || a.frame >= static_cast<int>(v.frames.size())) {
      throw std::runtime_error("load_video: annotation frame out of range");
    }
    v.annotations[a.frame].push_back(a);
  }
  return v;
}

}  // namespace detrack
