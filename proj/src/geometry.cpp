#include "detrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detrack {

namespace {

void require_positive(const Box& b, const char* who) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw std::invalid_argument(std::string(who) + ": box with non-positive extent");
  }
  if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) || !std::isfinite(b.h)) {
    throw std::invalid_argument(std::string(who) + ": non-finite box coordinate");
  }
}

}  // namespace

CornerBox corners(const Box& b) {
  return {b.x - 0.5 * b.w, b.y - 0.5 * b.h, b.x + 0.5 * b.w, b.y + 0.5 * b.h};
}

Box from_corners(const CornerBox& c) {
  return {0.5 * (c.x1 + c.x2), 0.5 * (c.y1 + c.y2), c.x2 - c.x1, c.y2 - c.y1};
}

double iou(const Box& a, const Box& b) {
  require_positive(a, "iou");
  require_positive(b, "iou");
  const CornerBox ca = corners(a);
  const CornerBox cb = corners(b);
  const double iw = std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1);
  const double ih = std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

TrackDelta encode_track(const Box& from, const Box& to) {
  require_positive(from, "encode_track");
  require_positive(to, "encode_track");
  TrackDelta d;
  d.dx = (to.x - from.x) / from.w;
  d.dy = (to.y - from.y) / from.h;
  d.dw = std::log(to.w / from.w);
  d.dh = std::log(to.h / from.h);
  return d;
}

Box decode_track(const Box& from, const TrackDelta& d) {
  require_positive(from, "decode_track");
  Box out;
  out.x = from.x + d.dx * from.w;
  out.y = from.y + d.dy * from.h;
  out.w = from.w * std::exp(d.dw);
  out.h = from.h * std::exp(d.dh);
  return out;
}

BoxDelta encode_box(const Box& anchor, const Box& target) { return encode_track(anchor, target); }

Box decode_box(const Box& anchor, const BoxDelta& d) { return decode_track(anchor, d); }

Box clip_box(const Box& b, double width, double height, double min_size) {
  CornerBox c = corners(b);
  c.x1 = std::clamp(c.x1, 0.0, width);
  c.x2 = std::clamp(c.x2, 0.0, width);
  c.y1 = std::clamp(c.y1, 0.0, height);
  c.y2 = std::clamp(c.y2, 0.0, height);
  Box out = from_corners(c);
  if (out.w < min_size) {
    out.w = min_size;
    out.x = std::clamp(out.x, 0.5 * min_size, std::max(width - 0.5 * min_size, 0.5 * min_size));
  }
  if (out.h < min_size) {
    out.h = min_size;
    out.y = std::clamp(out.y, 0.5 * min_size, std::max(height - 0.5 * min_size, 0.5 * min_size));
  }
  return out;
}

}  // namespace detrack
