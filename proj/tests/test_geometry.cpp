#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "detrack/geometry.hpp"
#include "detrack/rng.hpp"

using namespace detrack;

TEST_CASE("corner conversion round trips") {
  const Box b{10.0, 20.0, 4.0, 6.0};
  const CornerBox c = corners(b);
  CHECK(c.x1 == doctest::Approx(8.0));
  CHECK(c.y1 == doctest::Approx(17.0));
  CHECK(c.x2 == doctest::Approx(12.0));
  CHECK(c.y2 == doctest::Approx(23.0));
  const Box back = from_corners(c);
  CHECK(back.x == doctest::Approx(b.x));
  CHECK(back.y == doctest::Approx(b.y));
  CHECK(back.w == doctest::Approx(b.w));
  CHECK(back.h == doctest::Approx(b.h));
}

TEST_CASE("iou of half-overlapping unit-height boxes") {
  // boxes of size 2x2 centered one apart horizontally: intersection 1x2,
  // union 6 -> 1/3
  const Box a{1.0, 1.0, 2.0, 2.0};
  const Box b{2.0, 1.0, 2.0, 2.0};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{10.0, 10.0, 2.0, 2.0}) == doctest::Approx(0.0));
}

TEST_CASE("iou rejects degenerate boxes") {
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(iou(Box{0, 0, 1, -2}, Box{0, 0, 1, 1}), std::invalid_argument);
}

TEST_CASE("track delta worked example") {
  // (10,10,20,10) -> (14,12,40,10): dx = 4/20, dy = 2/10, dw = log 2, dh = 0
  const Box from{10.0, 10.0, 20.0, 10.0};
  const Box to{14.0, 12.0, 40.0, 10.0};
  const TrackDelta d = encode_track(from, to);
  CHECK(d.dx == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d.dy == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(d.dw == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(d.dh == doctest::Approx(0.0));

  const Box back = decode_track(from, d);
  CHECK(back.x == doctest::Approx(to.x));
  CHECK(back.y == doctest::Approx(to.y));
  CHECK(back.w == doctest::Approx(to.w));
  CHECK(back.h == doctest::Approx(to.h));
}

TEST_CASE("box delta codec matches track codec") {
  const Box from{3.0, 4.0, 8.0, 6.0};
  const Box to{4.5, 3.0, 10.0, 5.0};
  const BoxDelta bd = encode_box(from, to);
  const TrackDelta td = encode_track(from, to);
  CHECK(bd.dx == td.dx);
  CHECK(bd.dy == td.dy);
  CHECK(bd.dw == td.dw);
  CHECK(bd.dh == td.dh);
  const Box back = decode_box(from, bd);
  CHECK(back.x == doctest::Approx(to.x));
  CHECK(back.w == doctest::Approx(to.w));
}

TEST_CASE("codec round trips 1000 random pairs below 1e-9") {
  Rng rng(42);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Box a{rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(0.5, 40.0),
                rng.uniform(0.5, 40.0)};
    const Box b{rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(0.5, 40.0),
                rng.uniform(0.5, 40.0)};
    const Box back = decode_track(a, encode_track(a, b));
    worst = std::max({worst, std::abs(back.x - b.x), std::abs(back.y - b.y),
                      std::abs(back.w - b.w), std::abs(back.h - b.h)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("codec is translation covariant") {
  const Box a{5.0, 6.0, 7.0, 8.0};
  const Box b{9.0, 2.0, 3.0, 4.0};
  const TrackDelta d0 = encode_track(a, b);
  const Box a2{a.x + 11.0, a.y - 3.0, a.w, a.h};
  const Box b2{b.x + 11.0, b.y - 3.0, b.w, b.h};
  const TrackDelta d1 = encode_track(a2, b2);
  CHECK(d0.dx == doctest::Approx(d1.dx).epsilon(1e-12));
  CHECK(d0.dy == doctest::Approx(d1.dy).epsilon(1e-12));
  CHECK(d0.dw == doctest::Approx(d1.dw).epsilon(1e-12));
  CHECK(d0.dh == doctest::Approx(d1.dh).epsilon(1e-12));
}

TEST_CASE("codec rejects degenerate boxes") {
  CHECK_THROWS_AS(encode_track(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(encode_track(Box{0, 0, 1, 1}, Box{0, 0, 1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(decode_track(Box{0, 0, -1, 1}, TrackDelta{}), std::invalid_argument);
}

TEST_CASE("clip_box clamps to the image and keeps a minimum extent") {
  const Box b{-2.0, 5.0, 10.0, 4.0};
  const Box c = clip_box(b, 20.0, 20.0, 1.0);
  const CornerBox cc = corners(c);
  CHECK(cc.x1 >= 0.0);
  CHECK(cc.y1 >= 0.0);
  CHECK(cc.x2 <= 20.0);
  CHECK(cc.y2 <= 20.0);
  CHECK(c.w >= 1.0);
  CHECK(c.h >= 1.0);
}
