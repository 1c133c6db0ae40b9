#ifndef DETRACK_GEOMETRY_HPP_
#define DETRACK_GEOMETRY_HPP_

namespace detrack {

// Axis-aligned box in center parametrization: (center x, center y, width, height).
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// Corner view of the same box: x1 = x - w/2, x2 = x + w/2.
struct CornerBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

// Normalized inter-box transform: translation scaled by the source box size,
// log ratios for width and height.
struct TrackDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

// Box regression reuses the same parametrization.
using BoxDelta = TrackDelta;

CornerBox corners(const Box& b);
Box from_corners(const CornerBox& c);

// Intersection over union. Degenerate boxes (w <= 0 or h <= 0) are rejected.
double iou(const Box& a, const Box& b);

// delta = ((to.x - from.x)/from.w, (to.y - from.y)/from.h,
//          log(to.w/from.w), log(to.h/from.h))
TrackDelta encode_track(const Box& from, const Box& to);
Box decode_track(const Box& from, const TrackDelta& d);

BoxDelta encode_box(const Box& anchor, const Box& target);
Box decode_box(const Box& anchor, const BoxDelta& d);

// Clamp a box to [0, width] x [0, height], keeping at least min_size extent.
Box clip_box(const Box& b, double width, double height, double min_size = 1.0);

}  // namespace detrack

#endif  // DETRACK_GEOMETRY_HPP_
