#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "detrack/rng.hpp"
#include "detrack/tensor.hpp"
#include "detrack/tensorops.hpp"

using namespace detrack;

namespace {

FeatureMap filled(int h, int w, int d, double v) {
  FeatureMap m(h, w, d);
  for (double& x : m.data) x = v;
  return m;
}

FeatureMap random_map(int h, int w, int d, Rng& rng) {
  FeatureMap m(h, w, d);
  for (double& x : m.data) x = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("correlation of single-pixel maps is the channel inner product") {
  FeatureMap a(1, 1, 3), b(1, 1, 3);
  a.data = {1.0, 2.0, 2.0};
  b.data = {3.0, 1.0, 2.0};
  CorrelateOptions opt;
  opt.max_displacement = 0;
  opt.normalize = false;
  CorrelationMap c = correlate(a, b, opt);
  CHECK(c.offset_count() == 1);
  CHECK(c.at(0, 0, 0, 0) == doctest::Approx(9.0));

  opt.normalize = true;
  CHECK(correlate(a, b, opt).at(0, 0, 0, 0) == doctest::Approx(3.0));
}

TEST_CASE("correlation picks up a horizontal offset on a strip") {
  FeatureMap a(1, 3, 1), b(1, 3, 1);
  a.data = {0.0, 3.0, 0.0};
  b.data = {0.0, 0.0, 4.0};
  CorrelateOptions opt;
  opt.max_displacement = 1;
  opt.normalize = false;
  CorrelationMap c = correlate(a, b, opt);
  // a's value sits at column 1, b's at column 2: only q = +1 responds
  CHECK(c.at(0, 1, 0, 1) == doctest::Approx(12.0));
  CHECK(c.at(0, 1, 0, 0) == doctest::Approx(0.0));
  CHECK(c.at(0, 1, 0, -1) == doctest::Approx(0.0));
  // offsets that leave b's support read zero
  CHECK(c.at(0, 2, 0, 1) == doctest::Approx(0.0));
}

TEST_CASE("correlation channel layout is row-major in (p, q)") {
  CorrelationMap c;
  c.max_displacement = 2;
  CHECK(c.offset_count() == 25);
  CHECK(c.offset_channel(-2, -2) == 0);
  CHECK(c.offset_channel(-2, -1) == 1);
  CHECK(c.offset_channel(0, 0) == 12);
  CHECK(c.offset_channel(2, 2) == 24);
}

TEST_CASE("correlation argmax recovers a planted shift") {
  Rng rng(9);
  FeatureMap a = random_map(12, 12, 32, rng);
  FeatureMap b(12, 12, 32);
  const int dp = 2, dq = -1;
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 12; ++j) {
      for (int ch = 0; ch < 32; ++ch) {
        const int si = i - dp, sj = j - dq;
        b.at(i, j, ch) = (si >= 0 && si < 12 && sj >= 0 && sj < 12) ? a.at(si, sj, ch) : 0.0;
      }
    }
  }
  CorrelateOptions opt;
  opt.max_displacement = 3;
  CorrelationMap c = correlate(a, b, opt);
  int hits = 0, total = 0;
  for (int i = 3; i < 9; ++i) {
    for (int j = 3; j < 9; ++j) {
      double best = -1e300;
      int bp = 0, bq = 0;
      for (int p = -3; p <= 3; ++p) {
        for (int q = -3; q <= 3; ++q) {
          if (c.at(i, j, p, q) > best) {
            best = c.at(i, j, p, q);
            bp = p;
            bq = q;
          }
        }
      }
      ++total;
      if (bp == dp && bq == dq) ++hits;
    }
  }
  CHECK(hits == total);
}

TEST_CASE("correlation is linear in the first argument") {
  Rng rng(11);
  FeatureMap a = random_map(5, 5, 3, rng);
  FeatureMap b = random_map(5, 5, 3, rng);
  FeatureMap a2 = a;
  for (double& v : a2.data) v *= 2.5;
  CorrelateOptions opt;
  opt.max_displacement = 2;
  CorrelationMap c1 = correlate(a, b, opt);
  CorrelationMap c2 = correlate(a2, b, opt);
  for (std::size_t i = 0; i < c1.data.size(); ++i) {
    CHECK(c2.data[i] == doctest::Approx(2.5 * c1.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("correlation stride subsamples output positions") {
  Rng rng(12);
  FeatureMap a = random_map(5, 5, 2, rng);
  FeatureMap b = random_map(5, 5, 2, rng);
  CorrelateOptions opt;
  opt.max_displacement = 1;
  CorrelationMap full = correlate(a, b, opt);
  opt.stride = 2;
  CorrelationMap sub = correlate(a, b, opt);
  CHECK(sub.height == 3);  // ceil(5/2)
  CHECK(sub.width == 3);
  for (int io = 0; io < 3; ++io) {
    for (int jo = 0; jo < 3; ++jo) {
      for (int ch = 0; ch < sub.offset_count(); ++ch) {
        CHECK(sub.data[sub.idx(io, jo, ch)] ==
              doctest::Approx(full.data[full.idx(2 * io, 2 * jo, ch)]));
      }
    }
  }
}

TEST_CASE("correlate shape mismatch throws") {
  FeatureMap a(4, 4, 2), b(4, 4, 3);
  CHECK_THROWS_AS(correlate(a, b, CorrelateOptions{}), std::invalid_argument);
}

TEST_CASE("correlate gradients agree with finite differences") {
  Rng rng(13);
  FeatureMap a = random_map(4, 5, 2, rng);
  FeatureMap b = random_map(4, 5, 2, rng);
  CorrelateOptions opt;
  opt.max_displacement = 1;
  opt.stride = 2;
  CorrelationMap ref = correlate(a, b, opt);
  std::vector<double> w(ref.data.size());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);

  std::vector<double> x = a.data;
  x.insert(x.end(), b.data.begin(), b.data.end());
  auto f = [&](const std::vector<double>& v) {
    FeatureMap aa = a, bb = b;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(a.data.size()), aa.data.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(a.data.size()), v.end(), bb.data.begin());
    CorrelationMap c = correlate(aa, bb, opt);
    double s = 0.0;
    for (std::size_t i = 0; i < c.data.size(); ++i) s += c.data[i] * w[i];
    return s;
  };
  CorrelationMap gout = ref;
  gout.data = w;
  CorrelateGrads g = correlate_backward(a, b, opt, gout);
  std::vector<double> analytic = g.a.data;
  analytic.insert(analytic.end(), g.b.data.begin(), g.b.data.end());
  CHECK(grad_check(f, x, analytic) < 1e-4);
}

TEST_CASE("psroi pooling of a constant map returns the constant") {
  RoiGrid grid{3, 2};
  FeatureMap maps = filled(9, 9, grid.score_channels(), 0.7);
  const Box roi{4.5, 4.5, 6.0, 6.0};
  const std::vector<double> out = psroi_pool(maps, roi, grid, PoolMode::kScore);
  REQUIRE(static_cast<int>(out.size()) == grid.slots(PoolMode::kScore));
  for (double v : out) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("psroi bins read their own quadrant of the channel stack") {
  // slot 1's channel for bin (u, v) carries a 1 exactly in spatial quadrant
  // (u, v); pooling the whole map must hit 1 in every bin, which pins the
  // (row, col) orientation of the bin layout
  RoiGrid grid{2, 1};
  FeatureMap maps(4, 4, grid.score_channels());
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int u = 0; u < 2; ++u) {
        for (int v = 0; v < 2; ++v) {
          const bool inside = i / 2 == u && j / 2 == v;
          maps.at(i, j, 1 * 4 + u * 2 + v) = inside ? 1.0 : 0.0;
        }
      }
    }
  }
  const Box roi{2.0, 2.0, 4.0, 4.0};
  const std::vector<double> out = psroi_pool(maps, roi, grid, PoolMode::kScore);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("psroi slot-major layout across classes") {
  RoiGrid grid{2, 1};  // 2 slots (background + one class), 4 bins each
  FeatureMap maps(4, 4, grid.score_channels());
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int ch = 0; ch < grid.score_channels(); ++ch) maps.at(i, j, ch) = ch;
  const Box roi{2.0, 2.0, 4.0, 4.0};
  const std::vector<double> out = psroi_pool(maps, roi, grid, PoolMode::kScore);
  REQUIRE(out.size() == 2);
  // slot s averages channels s*4 .. s*4+3 -> s*4 + 1.5
  CHECK(out[0] == doctest::Approx(1.5));
  CHECK(out[1] == doctest::Approx(5.5));
}

TEST_CASE("psroi bins emptied by rounding contribute zero") {
  RoiGrid grid{3, 1};
  FeatureMap maps = filled(8, 8, grid.score_channels(), 1.0);
  // 2.25-cell extent over a k=3 grid: boundaries round to [0,1,2,2], so the
  // last bin on each axis is empty -> 4 of 9 bins carry signal
  const Box roi{1.125, 1.125, 2.25, 2.25};
  const std::vector<double> out = psroi_pool(maps, roi, grid, PoolMode::kScore);
  CHECK(out[0] == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("psroi rejects bad inputs") {
  RoiGrid grid{2, 1};
  FeatureMap maps = filled(6, 6, grid.score_channels(), 0.0);
  CHECK_THROWS(psroi_pool(maps, Box{3, 3, 0.0, 2.0}, grid, PoolMode::kScore));
  CHECK_THROWS(psroi_pool(maps, Box{40.0, 40.0, 2.0, 2.0}, grid, PoolMode::kScore));
  FeatureMap wrong = filled(6, 6, 5, 0.0);
  CHECK_THROWS(psroi_pool(wrong, Box{3, 3, 2, 2}, grid, PoolMode::kScore));
}

TEST_CASE("psroi gradients agree with finite differences") {
  Rng rng(17);
  RoiGrid grid{2, 2};
  FeatureMap maps = random_map(7, 7, grid.regression_channels(), rng);
  const Box roi{3.1, 3.4, 4.6, 3.9};
  std::vector<double> w(static_cast<std::size_t>(grid.slots(PoolMode::kRegression)));
  for (double& v : w) v = rng.uniform(-1.0, 1.0);

  auto f = [&](const std::vector<double>& v) {
    FeatureMap mm = maps;
    mm.data = v;
    const std::vector<double> out = psroi_pool(mm, roi, grid, PoolMode::kRegression);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
    return s;
  };
  FeatureMap grad(7, 7, grid.regression_channels());
  psroi_backward(maps, roi, grid, PoolMode::kRegression, w, grad);
  CHECK(grad_check(f, maps.data, grad.data) < 1e-4);
}

TEST_CASE("conv2d with a centered delta kernel reproduces the input") {
  Rng rng(19);
  FeatureMap x = random_map(5, 6, 2, rng);
  ConvKernel k(3, 3, 2, 2);
  k.weights[k.widx(1, 1, 0, 0)] = 1.0;
  k.weights[k.widx(1, 1, 1, 1)] = 1.0;
  FeatureMap y = conv2d(x, k, 1);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d stride produces ceil-divided output anchored at i*stride") {
  Rng rng(20);
  FeatureMap x = random_map(5, 5, 1, rng);
  ConvKernel k(1, 1, 1, 1);
  k.weights[0] = 1.0;
  k.bias[0] = 0.25;
  FeatureMap y = conv2d(x, k, 2);
  CHECK(y.height == 3);
  CHECK(y.width == 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(y.at(i, j, 0) == doctest::Approx(x.at(2 * i, 2 * j, 0) + 0.25));
}

TEST_CASE("conv2d rejects even kernels and channel mismatch") {
  FeatureMap x(4, 4, 2);
  CHECK_THROWS_AS(conv2d(x, ConvKernel(2, 2, 2, 1), 1), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, ConvKernel(3, 3, 3, 1), 1), std::invalid_argument);
}

TEST_CASE("conv2d gradients agree with finite differences") {
  Rng rng(21);
  FeatureMap x = random_map(4, 5, 2, rng);
  ConvKernel k(3, 3, 2, 3);
  for (double& v : k.weights) v = rng.uniform(-0.5, 0.5);
  for (double& v : k.bias) v = rng.uniform(-0.5, 0.5);
  FeatureMap ref = conv2d(x, k, 2);
  std::vector<double> w(ref.data.size());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);

  std::vector<double> params = x.data;
  params.insert(params.end(), k.weights.begin(), k.weights.end());
  params.insert(params.end(), k.bias.begin(), k.bias.end());
  auto f = [&](const std::vector<double>& v) {
    FeatureMap xx = x;
    ConvKernel kk = k;
    std::size_t off = 0;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(x.data.size()), xx.data.begin());
    off += x.data.size();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
              v.begin() + static_cast<std::ptrdiff_t>(off + kk.weights.size()),
              kk.weights.begin());
    off += kk.weights.size();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(off), v.end(), kk.bias.begin());
    FeatureMap y = conv2d(xx, kk, 2);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * w[i];
    return s;
  };
  FeatureMap gout = ref;
  gout.data = w;
  ConvKernel gk(3, 3, 2, 3);
  FeatureMap gx = conv2d_backward(x, k, 2, gout, gk);
  std::vector<double> analytic = gx.data;
  analytic.insert(analytic.end(), gk.weights.begin(), gk.weights.end());
  analytic.insert(analytic.end(), gk.bias.begin(), gk.bias.end());
  CHECK(grad_check(f, params, analytic) < 1e-4);
}

TEST_CASE("relu and its backward mask") {
  FeatureMap x(1, 1, 4);
  x.data = {-1.0, 0.5, -0.25, 2.0};
  FeatureMap y = relu(x);
  CHECK(y.data[0] == 0.0);
  CHECK(y.data[1] == 0.5);
  CHECK(y.data[2] == 0.0);
  CHECK(y.data[3] == 2.0);
  FeatureMap g = x;
  g.data = {1.0, 1.0, 1.0, 1.0};
  FeatureMap gx = relu_backward(x, g);
  CHECK(gx.data[0] == 0.0);
  CHECK(gx.data[1] == 1.0);
  CHECK(gx.data[2] == 0.0);
  CHECK(gx.data[3] == 1.0);
}

TEST_CASE("softmax normalizes and survives large logits") {
  const std::vector<double> p = softmax({1.0, 2.0, 3.0});
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[2] > p[1]);
  const std::vector<double> q = softmax({1000.0, 1000.0});
  CHECK(q[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(q[0]));
}

TEST_CASE("smooth l1 values and clamped gradient") {
  CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
  CHECK(smooth_l1(-0.5) == doctest::Approx(0.125));
  CHECK(smooth_l1(2.0) == doctest::Approx(1.5));
  CHECK(smooth_l1(-3.0) == doctest::Approx(2.5));
  CHECK(smooth_l1_grad(0.5) == doctest::Approx(0.5));
  CHECK(smooth_l1_grad(2.0) == doctest::Approx(1.0));
  CHECK(smooth_l1_grad(-2.0) == doctest::Approx(-1.0));
}

TEST_CASE("grad_check flags a wrong gradient") {
  auto f = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
  };
  const std::vector<double> x = {0.3, -0.7, 1.1};
  const std::vector<double> good = {0.6, -1.4, 2.2};
  std::vector<double> bad = good;
  bad[1] = 1.4;
  CHECK(grad_check(f, x, good) < 1e-6);
  CHECK(grad_check(f, x, bad) > 1e-1);
}

TEST_CASE("feature map serialization round trips exactly") {
  Rng rng(23);
  FeatureMap m = random_map(6, 4, 5, rng);
  const auto path = std::filesystem::temp_directory_path() / "detrack_test_map.dtt1";
  write_dtt1(path, m);
  FeatureMap back = read_dtt1(path);
  CHECK(back.height == m.height);
  CHECK(back.width == m.width);
  CHECK(back.channels == m.channels);
  CHECK(back.data == m.data);  // bitwise
  std::filesystem::remove(path);
}

TEST_CASE("feature map reader rejects corrupt headers") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto bad_magic = dir / "detrack_test_badmagic.dtt1";
  {
    std::ofstream out(bad_magic, std::ios::binary);
    out.write("NOPE", 4);
    const char zeros[12] = {0};
    out.write(zeros, 12);
  }
  CHECK_THROWS(read_dtt1(bad_magic));
  std::filesystem::remove(bad_magic);

  FeatureMap m(2, 2, 1);
  const auto trunc = dir / "detrack_test_trunc.dtt1";
  write_dtt1(trunc, m);
  std::filesystem::resize_file(trunc, 20);
  CHECK_THROWS(read_dtt1(trunc));
  std::filesystem::remove(trunc);
}
