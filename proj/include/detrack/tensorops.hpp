#ifndef DETRACK_TENSOROPS_HPP_
#define DETRACK_TENSOROPS_HPP_

#include <functional>
#include <vector>

#include "detrack/geometry.hpp"
#include "detrack/tensor.hpp"

namespace detrack {

// Dense cross-frame inner products. Channel order is p-major, q-minor with
// p, q in [-d, d]: channel = (p + d) * (2d + 1) + (q + d).
struct CorrelationMap {
  int height = 0;
  int width = 0;
  int max_displacement = 0;
  std::vector<double> data;

  CorrelationMap() = default;
  CorrelationMap(int h, int w, int d)
      : height(h), width(w), max_displacement(d),
        data(static_cast<std::size_t>(h) * w * (2 * d + 1) * (2 * d + 1), 0.0) {}

  int side() const { return 2 * max_displacement + 1; }
  int offset_count() const { return side() * side(); }
  int offset_channel(int p, int q) const {
    return (p + max_displacement) * side() + (q + max_displacement);
  }
  std::size_t idx(int i, int j, int ch) const {
    return (static_cast<std::size_t>(i) * width + j) * offset_count() + ch;
  }
  double at(int i, int j, int p, int q) const { return data[idx(i, j, offset_channel(p, q))]; }
  double& at(int i, int j, int p, int q) { return data[idx(i, j, offset_channel(p, q))]; }

  FeatureMap to_feature_map() const;
};

struct CorrelateOptions {
  int max_displacement = 8;
  int stride = 1;        // subsamples output positions: input (i,j) = out (io,jo) * stride
  bool normalize = true; // divide each inner product by the channel count
};

// out(io,jo,p,q) = <a(i,j,:), b(i+p, j+q, :)>, zero outside b's support.
// Output spatial size is ceil(H/stride) x ceil(W/stride).
CorrelationMap correlate(const FeatureMap& a, const FeatureMap& b, const CorrelateOptions& opt);

struct CorrelateGrads {
  FeatureMap a;
  FeatureMap b;
};

CorrelateGrads correlate_backward(const FeatureMap& a, const FeatureMap& b,
                                  const CorrelateOptions& opt, const CorrelationMap& grad_out);

// ---------------------------------------------------------------------------

enum class PoolMode { kScore, kRegression };

// Position-sensitive pooling grid: k x k bins; score maps carry
// k^2 * (class_count + 1) channels, regression maps 4 * k^2.
// Channel layout is slot-major: channel = slot * k^2 + u * k + v, where slot
// is the class index (background = 0) or the delta component.
struct RoiGrid {
  int k = 3;
  int class_count = 3;

  int score_channels() const { return k * k * (class_count + 1); }
  int regression_channels() const { return 4 * k * k; }
  int slots(PoolMode mode) const { return mode == PoolMode::kScore ? class_count + 1 : 4; }
};

// roi is given in map cell units. Bin boundaries are rounded to integer cell
// indices and treated as half-open; bins emptied by rounding or clipping
// contribute zero. Output is the mean over the k^2 bins per slot.
std::vector<double> psroi_pool(const FeatureMap& maps, const Box& roi, const RoiGrid& grid,
                               PoolMode mode);

// Accumulates into grad_maps (must match maps' shape).
void psroi_backward(const FeatureMap& maps, const Box& roi, const RoiGrid& grid, PoolMode mode,
                    const std::vector<double>& grad_out, FeatureMap& grad_maps);

// ---------------------------------------------------------------------------

struct ConvKernel {
  int kh = 0;
  int kw = 0;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weights;  // ((ki * kw + kj) * in + ci) * out + co
  std::vector<double> bias;     // out

  ConvKernel() = default;
  ConvKernel(int kh_, int kw_, int in, int out)
      : kh(kh_), kw(kw_), in_channels(in), out_channels(out),
        weights(static_cast<std::size_t>(kh_) * kw_ * in * out, 0.0), bias(out, 0.0) {}

  std::size_t widx(int ki, int kj, int ci, int co) const {
    return ((static_cast<std::size_t>(ki) * kw + kj) * in_channels + ci) * out_channels + co;
  }
};

// Zero-padded "same" convolution (odd kernels). Output spatial size is
// ceil(H/stride) x ceil(W/stride); output (i,j) is anchored at input
// (i*stride, j*stride).
FeatureMap conv2d(const FeatureMap& x, const ConvKernel& k, int stride = 1);

// Returns the gradient w.r.t. x; accumulates weight and bias gradients
// into grad_k (must already be sized like k).
FeatureMap conv2d_backward(const FeatureMap& x, const ConvKernel& k, int stride,
                           const FeatureMap& grad_out, ConvKernel& grad_k);

FeatureMap relu(const FeatureMap& x);
FeatureMap relu_backward(const FeatureMap& pre_activation, const FeatureMap& grad_out);

std::vector<double> softmax(const std::vector<double>& logits);
// Maps d(loss)/d(probs) back to d(loss)/d(logits).
std::vector<double> softmax_backward(const std::vector<double>& probs,
                                     const std::vector<double>& grad_probs);

double smooth_l1(double x);
double smooth_l1_grad(double x);

// Central finite differences against an analytic gradient. Returns
// max_i |analytic_i - central_i| / max(1, |analytic_i|).
double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& x, const std::vector<double>& analytic_grad,
                  double eps = 1e-3);

}  // namespace detrack

#endif  // DETRACK_TENSOROPS_HPP_
