#include "detrack/tensorops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detrack {

FeatureMap CorrelationMap::to_feature_map() const {
  FeatureMap m(height, width, offset_count());
  m.data = data;
  return m;
}

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

void check_correlate_inputs(const FeatureMap& a, const FeatureMap& b, const CorrelateOptions& opt) {
  if (!a.same_shape(b)) throw std::invalid_argument("correlate: shape mismatch");
  if (a.height <= 0 || a.width <= 0 || a.channels <= 0) {
    throw std::invalid_argument("correlate: empty input");
  }
  if (opt.max_displacement < 0 || opt.stride < 1) {
    throw std::invalid_argument("correlate: bad options");
  }
}

}  // namespace

CorrelationMap correlate(const FeatureMap& a, const FeatureMap& b, const CorrelateOptions& opt) {
  check_correlate_inputs(a, b, opt);
  const int d = opt.max_displacement;
  const int oh = ceil_div(a.height, opt.stride);
  const int ow = ceil_div(a.width, opt.stride);
  const double scale = opt.normalize ? 1.0 / a.channels : 1.0;
  CorrelationMap out(oh, ow, d);
  for (int io = 0; io < oh; ++io) {
    const int i = io * opt.stride;
    for (int jo = 0; jo < ow; ++jo) {
      const int j = jo * opt.stride;
      const double* va = &a.data[a.idx(i, j, 0)];
      for (int p = -d; p <= d; ++p) {
        const int ib = i + p;
        if (ib < 0 || ib >= b.height) continue;
        for (int q = -d; q <= d; ++q) {
          const int jb = j + q;
          if (jb < 0 || jb >= b.width) continue;
          const double* vb = &b.data[b.idx(ib, jb, 0)];
          double acc = 0.0;
          for (int c = 0; c < a.channels; ++c) acc += va[c] * vb[c];
          out.at(io, jo, p, q) = acc * scale;
        }
      }
    }
  }
  return out;
}

CorrelateGrads correlate_backward(const FeatureMap& a, const FeatureMap& b,
                                  const CorrelateOptions& opt, const CorrelationMap& grad_out) {
  check_correlate_inputs(a, b, opt);
  const int d = opt.max_displacement;
  const int oh = ceil_div(a.height, opt.stride);
  const int ow = ceil_div(a.width, opt.stride);
  if (grad_out.height != oh || grad_out.width != ow || grad_out.max_displacement != d) {
    throw std::invalid_argument("correlate_backward: gradient shape mismatch");
  }
  const double scale = opt.normalize ? 1.0 / a.channels : 1.0;
  CorrelateGrads g{FeatureMap(a.height, a.width, a.channels),
                   FeatureMap(b.height, b.width, b.channels)};
  for (int io = 0; io < oh; ++io) {
    const int i = io * opt.stride;
    for (int jo = 0; jo < ow; ++jo) {
      const int j = jo * opt.stride;
      const double* va = &a.data[a.idx(i, j, 0)];
      double* ga = &g.a.data[g.a.idx(i, j, 0)];
      for (int p = -d; p <= d; ++p) {
        const int ib = i + p;
        if (ib < 0 || ib >= b.height) continue;
        for (int q = -d; q <= d; ++q) {
          const int jb = j + q;
          if (jb < 0 || jb >= b.width) continue;
          const double go = grad_out.at(io, jo, p, q) * scale;
          if (go == 0.0) continue;
          const double* vb = &b.data[b.idx(ib, jb, 0)];
          double* gb = &g.b.data[g.b.idx(ib, jb, 0)];
          for (int c = 0; c < a.channels; ++c) {
            ga[c] += go * vb[c];
            gb[c] += go * va[c];
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

struct BinRange {
  int lo = 0;
  int hi = 0;  // half-open
  int count() const { return hi - lo; }
};

// Rounded half-open cell range for bin u of k along an axis of the given
// extent; the result may be empty.
BinRange bin_range(double start, double size, int u, int k, int extent) {
  const double step = size / k;
  int lo = static_cast<int>(std::lround(start + step * u));
  int hi = static_cast<int>(std::lround(start + step * (u + 1)));
  lo = std::clamp(lo, 0, extent);
  hi = std::clamp(hi, 0, extent);
  return {lo, hi};
}

void check_psroi_inputs(const FeatureMap& maps, const Box& roi, const RoiGrid& grid,
                        PoolMode mode) {
  if (grid.k < 1 || grid.class_count < 1) throw std::invalid_argument("psroi_pool: bad grid");
  const int want =
      mode == PoolMode::kScore ? grid.score_channels() : grid.regression_channels();
  if (maps.channels != want) {
    throw std::invalid_argument("psroi_pool: channel count does not match grid");
  }
  if (!(roi.w > 0.0) || !(roi.h > 0.0)) {
    throw std::invalid_argument("psroi_pool: roi with non-positive extent");
  }
  const CornerBox c = corners(roi);
  if (c.x2 <= 0.0 || c.x1 >= maps.width || c.y2 <= 0.0 || c.y1 >= maps.height) {
    throw std::invalid_argument("psroi_pool: roi entirely outside map");
  }
}

}  // namespace

std::vector<double> psroi_pool(const FeatureMap& maps, const Box& roi, const RoiGrid& grid,
                               PoolMode mode) {
  check_psroi_inputs(maps, roi, grid, mode);
  const int k = grid.k;
  const int slots = grid.slots(mode);
  const CornerBox c = corners(roi);
  std::vector<double> out(slots, 0.0);
  for (int u = 0; u < k; ++u) {
    const BinRange rows = bin_range(c.y1, roi.h, u, k, maps.height);
    for (int v = 0; v < k; ++v) {
      const BinRange cols = bin_range(c.x1, roi.w, v, k, maps.width);
      const int cells = rows.count() * cols.count();
      if (cells <= 0) continue;  // emptied by rounding or clipping
      for (int s = 0; s < slots; ++s) {
        const int ch = s * k * k + u * k + v;
        double acc = 0.0;
        for (int i = rows.lo; i < rows.hi; ++i)
          for (int j = cols.lo; j < cols.hi; ++j) acc += maps.at(i, j, ch);
        out[s] += acc / cells;
      }
    }
  }
  const double norm = 1.0 / (k * k);
  for (double& v : out) v *= norm;
  return out;
}

void psroi_backward(const FeatureMap& maps, const Box& roi, const RoiGrid& grid, PoolMode mode,
                    const std::vector<double>& grad_out, FeatureMap& grad_maps) {
  check_psroi_inputs(maps, roi, grid, mode);
  const int k = grid.k;
  const int slots = grid.slots(mode);
  if (static_cast<int>(grad_out.size()) != slots) {
    throw std::invalid_argument("psroi_backward: gradient size mismatch");
  }
  if (!grad_maps.same_shape(maps)) {
    throw std::invalid_argument("psroi_backward: grad_maps shape mismatch");
  }
  const CornerBox c = corners(roi);
  const double norm = 1.0 / (k * k);
  for (int u = 0; u < k; ++u) {
    const BinRange rows = bin_range(c.y1, roi.h, u, k, maps.height);
    for (int v = 0; v < k; ++v) {
      const BinRange cols = bin_range(c.x1, roi.w, v, k, maps.width);
      const int cells = rows.count() * cols.count();
      if (cells <= 0) continue;
      for (int s = 0; s < slots; ++s) {
        const double g = grad_out[s] * norm / cells;
        if (g == 0.0) continue;
        const int ch = s * k * k + u * k + v;
        for (int i = rows.lo; i < rows.hi; ++i)
          for (int j = cols.lo; j < cols.hi; ++j) grad_maps.at(i, j, ch) += g;
      }
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

void check_conv_inputs(const FeatureMap& x, const ConvKernel& k, int stride) {
  if (k.kh % 2 == 0 || k.kw % 2 == 0) throw std::invalid_argument("conv2d: even kernel extent");
  if (k.in_channels != x.channels) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1) throw std::invalid_argument("conv2d: bad stride");
}

}  // namespace

FeatureMap conv2d(const FeatureMap& x, const ConvKernel& k, int stride) {
  check_conv_inputs(x, k, stride);
  const int oh = ceil_div(x.height, stride);
  const int ow = ceil_div(x.width, stride);
  const int ph = (k.kh - 1) / 2;
  const int pw = (k.kw - 1) / 2;
  FeatureMap out(oh, ow, k.out_channels);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double* dst = &out.data[out.idx(i, j, 0)];
      for (int co = 0; co < k.out_channels; ++co) dst[co] = k.bias[co];
      for (int ki = 0; ki < k.kh; ++ki) {
        const int ii = i * stride + ki - ph;
        if (ii < 0 || ii >= x.height) continue;
        for (int kj = 0; kj < k.kw; ++kj) {
          const int jj = j * stride + kj - pw;
          if (jj < 0 || jj >= x.width) continue;
          const double* src = &x.data[x.idx(ii, jj, 0)];
          const double* w = &k.weights[k.widx(ki, kj, 0, 0)];
          for (int ci = 0; ci < k.in_channels; ++ci) {
            const double v = src[ci];
            if (v == 0.0) {
              continue;
            }
            const double* wrow = w + static_cast<std::size_t>(ci) * k.out_channels;
            for (int co = 0; co < k.out_channels; ++co) dst[co] += v * wrow[co];
          }
        }
      }
    }
  }
  return out;
}

FeatureMap conv2d_backward(const FeatureMap& x, const ConvKernel& k, int stride,
                           const FeatureMap& grad_out, ConvKernel& grad_k) {
  check_conv_inputs(x, k, stride);
  const int oh = ceil_div(x.height, stride);
  const int ow = ceil_div(x.width, stride);
  if (grad_out.height != oh || grad_out.width != ow || grad_out.channels != k.out_channels) {
    throw std::invalid_argument("conv2d_backward: gradient shape mismatch");
  }
  if (grad_k.kh != k.kh || grad_k.kw != k.kw || grad_k.in_channels != k.in_channels ||
      grad_k.out_channels != k.out_channels) {
    throw std::invalid_argument("conv2d_backward: grad_k shape mismatch");
  }
  const int ph = (k.kh - 1) / 2;
  const int pw = (k.kw - 1) / 2;
  FeatureMap grad_x(x.height, x.width, x.channels);
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      const double* go = &grad_out.data[grad_out.idx(i, j, 0)];
      for (int co = 0; co < k.out_channels; ++co) grad_k.bias[co] += go[co];
      for (int ki = 0; ki < k.kh; ++ki) {
        const int ii = i * stride + ki - ph;
        if (ii < 0 || ii >= x.height) continue;
        for (int kj = 0; kj < k.kw; ++kj) {
          const int jj = j * stride + kj - pw;
          if (jj < 0 || jj >= x.width) continue;
          const double* src = &x.data[x.idx(ii, jj, 0)];
          double* gsrc = &grad_x.data[grad_x.idx(ii, jj, 0)];
          for (int ci = 0; ci < k.in_channels; ++ci) {
            const double* wrow = &k.weights[k.widx(ki, kj, ci, 0)];
            double* gwrow = &grad_k.weights[grad_k.widx(ki, kj, ci, 0)];
            const double v = src[ci];
            double acc = 0.0;
            for (int co = 0; co < k.out_channels; ++co) {
              acc += go[co] * wrow[co];
              gwrow[co] += go[co] * v;
            }
            gsrc[ci] += acc;
          }
        }
      }
    }
  }
  return grad_x;
}

FeatureMap relu(const FeatureMap& x) {
  FeatureMap out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

FeatureMap relu_backward(const FeatureMap& pre_activation, const FeatureMap& grad_out) {
  if (!pre_activation.same_shape(grad_out)) {
    throw std::invalid_argument("relu_backward: shape mismatch");
  }
  FeatureMap g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    if (pre_activation.data[i] <= 0.0) g.data[i] = 0.0;
  }
  return g;
}

std::vector<double> softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> softmax_backward(const std::vector<double>& probs,
                                     const std::vector<double>& grad_probs) {
  if (probs.size() != grad_probs.size()) {
    throw std::invalid_argument("softmax_backward: size mismatch");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_probs[i];
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_probs[i] - dot);
  return g;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& x, const std::vector<double>& analytic_grad,
                  double eps) {
  if (x.size() != analytic_grad.size()) throw std::invalid_argument("grad_check: size mismatch");
  std::vector<double> probe = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + eps;
    const double hi = f(probe);
    probe[i] = keep - eps;
    const double lo = f(probe);
    probe[i] = keep;
    const double central = (hi - lo) / (2.0 * eps);
    const double a = analytic_grad[i];
    const double err = std::abs(a - central) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace detrack
