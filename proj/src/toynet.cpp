#include "detrack/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

#include "detrack/rng.hpp"
#include "detrack/util.hpp"

namespace detrack {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

int clamp_displacement(int requested, int nominal_extent) {
  // a (2d+1)^2 offset window must fit the nominal map
  return std::max(0, std::min(requested, (nominal_extent - 1) / 2));
}

FeatureMap concat_channels(const std::vector<const FeatureMap*>& parts) {
  const int h = parts.front()->height;
  const int w = parts.front()->width;
  int d = 0;
  for (const FeatureMap* p : parts) {
    if (p->height != h || p->width != w) {
      throw std::invalid_argument("concat_channels: spatial shape mismatch");
    }
    d += p->channels;
  }
  FeatureMap out(h, w, d);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double* dst = &out.data[out.idx(i, j, 0)];
      for (const FeatureMap* p : parts) {
        const double* src = &p->data[p->idx(i, j, 0)];
        dst = std::copy(src, src + p->channels, dst);
      }
    }
  }
  return out;
}

FeatureMap slice_channels(const FeatureMap& m, int from, int count) {
  FeatureMap out(m.height, m.width, count);
  for (int i = 0; i < m.height; ++i) {
    for (int j = 0; j < m.width; ++j) {
      const double* src = &m.data[m.idx(i, j, from)];
      std::copy(src, src + count, &out.data[out.idx(i, j, 0)]);
    }
  }
  return out;
}

void add_into(FeatureMap& dst, const FeatureMap& src) {
  if (!dst.same_shape(src)) throw std::invalid_argument("add_into: shape mismatch");
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

CorrelationMap corr_from_feature_map(const FeatureMap& m, int d) {
  CorrelationMap out(m.height, m.width, d);
  if (out.data.size() != m.data.size()) {
    throw std::invalid_argument("corr_from_feature_map: channel count mismatch");
  }
  out.data = m.data;
  return out;
}

CorrelateOptions fine_options(const ModelConfig& cfg) {
  return {cfg.d_fine(), cfg.corr_stride, cfg.normalize_correlation};
}

CorrelateOptions coarse_options(const ModelConfig& cfg) {
  return {cfg.d_coarse(), 1, cfg.normalize_correlation};
}

void check_config(const ModelConfig& cfg) {
  if (cfg.class_count < 1) throw std::invalid_argument("toynet: class_count must be positive");
  if (cfg.k < 1) throw std::invalid_argument("toynet: k must be positive");
  if (cfg.base_channels < 1 || cfg.top_channels < 1) {
    throw std::invalid_argument("toynet: channel counts must be positive");
  }
  if (cfg.image_size < cfg.coarse_stride()) {
    throw std::invalid_argument("toynet: image_size below the coarse stride");
  }
  if (cfg.fine_stride() * cfg.corr_stride != cfg.coarse_stride()) {
    throw std::invalid_argument(
        "toynet: corr_stride must map the fine correlation onto the coarse grid");
  }
  if (cfg.anchor_sizes.empty()) throw std::invalid_argument("toynet: no anchor sizes");
}

}  // namespace

int ModelConfig::d_fine() const {
  return clamp_displacement(max_displacement, ceil_div(image_size, fine_stride()));
}

int ModelConfig::d_coarse() const {
  return clamp_displacement(max_displacement, ceil_div(image_size, coarse_stride()));
}

int ModelConfig::stack_channels() const {
  const int nf = 2 * d_fine() + 1;
  const int nc = 2 * d_coarse() + 1;
  return nf * nf + nc * nc + 2 * grid().regression_channels();
}

std::vector<std::pair<std::string, ConvKernel*>> ModelParams::tensors() {
  return {{"conv1", &conv1},       {"conv2", &conv2},     {"conv3", &conv3},
          {"conv4", &conv4},       {"cls_head", &cls_head}, {"reg_head", &reg_head},
          {"tra_head", &tra_head}};
}

std::vector<std::pair<std::string, const ConvKernel*>> ModelParams::tensors() const {
  return {{"conv1", &conv1},       {"conv2", &conv2},     {"conv3", &conv3},
          {"conv4", &conv4},       {"cls_head", &cls_head}, {"reg_head", &reg_head},
          {"tra_head", &tra_head}};
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  ModelParams p;
  p.config = cfg;
  const RoiGrid grid = cfg.grid();
  p.conv1 = ConvKernel(3, 3, 3, cfg.base_channels);
  p.conv2 = ConvKernel(3, 3, cfg.base_channels, cfg.base_channels);
  p.conv3 = ConvKernel(3, 3, cfg.base_channels, cfg.base_channels);
  p.conv4 = ConvKernel(3, 3, cfg.base_channels, cfg.top_channels);
  p.cls_head = ConvKernel(1, 1, cfg.top_channels, grid.score_channels());
  p.reg_head = ConvKernel(1, 1, cfg.top_channels, grid.regression_channels());
  p.tra_head = ConvKernel(1, 1, cfg.stack_channels(), grid.regression_channels());

  Rng rng(Rng::mix(seed, 0x70e7));
  for (auto& [name, k] : p.tensors()) {
    const bool head = name.find("head") != std::string::npos;
    const double fan_in = static_cast<double>(k->kh) * k->kw * k->in_channels;
    const double sigma = head ? 0.01 : std::sqrt(2.0 / fan_in);
    for (double& w : k->weights) w = rng.normal(0.0, sigma);
    for (double& b : k->bias) b = 0.0;
  }
  return p;
}

FrameTrunk run_frame_trunk(const ModelParams& params, const FeatureMap& image) {
  if (image.channels != params.conv1.in_channels) {
    throw std::invalid_argument("run_frame_trunk: unexpected image channel count");
  }
  FrameTrunk t;
  t.x1p = conv2d(image, params.conv1, 1);
  t.x1 = relu(t.x1p);
  t.x2p = conv2d(t.x1, params.conv2, 2);
  t.x2 = relu(t.x2p);
  t.x3p = conv2d(t.x2, params.conv3, 1);
  t.x3 = relu(t.x3p);
  t.x4p = conv2d(t.x3, params.conv4, 2);
  t.x4 = relu(t.x4p);
  t.cls = conv2d(t.x4, params.cls_head, 1);
  t.reg = conv2d(t.x4, params.reg_head, 1);
  return t;
}

PairCoupling run_pair_coupling(const ModelParams& params, const FrameTrunk& a,
                               const FrameTrunk& b) {
  const ModelConfig& cfg = params.config;
  PairCoupling c;
  c.corr_fine = correlate(a.x2, b.x2, fine_options(cfg));
  c.corr_coarse = correlate(a.x4, b.x4, coarse_options(cfg));
  const FeatureMap fine_fm = c.corr_fine.to_feature_map();
  const FeatureMap coarse_fm = c.corr_coarse.to_feature_map();
  c.stack = concat_channels({&fine_fm, &coarse_fm, &a.reg, &b.reg});
  c.tra = conv2d(c.stack, params.tra_head, 1);
  return c;
}

PairTrunk run_pair_trunk(const ModelParams& params, const FeatureMap& image_a,
                         const FeatureMap& image_b) {
  PairTrunk t;
  t.a = run_frame_trunk(params, image_a);
  t.b = run_frame_trunk(params, image_b);
  t.pair = run_pair_coupling(params, t.a, t.b);
  return t;
}

Box roi_to_cells(const Box& roi, int stride) {
  const double s = static_cast<double>(stride);
  return {roi.x / s, roi.y / s, roi.w / s, roi.h / s};
}

std::vector<double> pool_class_probs(const ModelParams& params, const FeatureMap& cls_map,
                                     const Box& roi_image) {
  const Box cells = roi_to_cells(roi_image, params.config.coarse_stride());
  return softmax(psroi_pool(cls_map, cells, params.config.grid(), PoolMode::kScore));
}

BoxDelta pool_box_delta(const ModelParams& params, const FeatureMap& reg_map,
                        const Box& roi_image) {
  const Box cells = roi_to_cells(roi_image, params.config.coarse_stride());
  const auto v = psroi_pool(reg_map, cells, params.config.grid(), PoolMode::kRegression);
  return {v[0], v[1], v[2], v[3]};
}

TrackDelta pool_track_delta(const ModelParams& params, const FeatureMap& tra_map,
                            const Box& roi_image) {
  const Box cells = roi_to_cells(roi_image, params.config.coarse_stride());
  const auto v = psroi_pool(tra_map, cells, params.config.grid(), PoolMode::kRegression);
  return {v[0], v[1], v[2], v[3]};
}

BatchPredictions pool_predictions(const ModelParams& params, const PairTrunk& trunk,
                                  const RoiBatch& batch) {
  BatchPredictions preds;
  for (const RoiAssignment& r : batch.rois) {
    const FrameTrunk& ft = r.frame == 0 ? trunk.a : trunk.b;
    preds.class_probs.push_back(pool_class_probs(params, ft.cls, r.roi));
    preds.box_deltas.push_back(pool_box_delta(params, ft.reg, r.roi));
  }
  for (const TrackTarget& t : batch.tracks) {
    preds.track_deltas.push_back(pool_track_delta(params, trunk.pair.tra, t.roi));
  }
  return preds;
}

PairForward forward_pair(const ModelParams& params, const FeatureMap& image_a,
                         const FeatureMap& image_b, const RoiBatch& batch) {
  PairForward f;
  f.trunk = run_pair_trunk(params, image_a, image_b);
  f.preds = pool_predictions(params, f.trunk, batch);
  return f;
}

ParamGrads::ParamGrads(const ModelParams& like)
    : conv1(like.conv1.kh, like.conv1.kw, like.conv1.in_channels, like.conv1.out_channels),
      conv2(like.conv2.kh, like.conv2.kw, like.conv2.in_channels, like.conv2.out_channels),
      conv3(like.conv3.kh, like.conv3.kw, like.conv3.in_channels, like.conv3.out_channels),
      conv4(like.conv4.kh, like.conv4.kw, like.conv4.in_channels, like.conv4.out_channels),
      cls_head(like.cls_head.kh, like.cls_head.kw, like.cls_head.in_channels,
               like.cls_head.out_channels),
      reg_head(like.reg_head.kh, like.reg_head.kw, like.reg_head.in_channels,
               like.reg_head.out_channels),
      tra_head(like.tra_head.kh, like.tra_head.kw, like.tra_head.in_channels,
               like.tra_head.out_channels) {}

std::vector<ConvKernel*> ParamGrads::tensors() {
  return {&conv1, &conv2, &conv3, &conv4, &cls_head, &reg_head, &tra_head};
}

void ParamGrads::scale(double s) {
  for (ConvKernel* k : tensors()) {
    for (double& w : k->weights) w *= s;
    for (double& b : k->bias) b *= s;
  }
}

void backward_pair(const ModelParams& params, const FeatureMap& image_a,
                   const FeatureMap& image_b, const RoiBatch& batch, const PairForward& fwd,
                   const PredictionGrads& pgrads, ParamGrads& grads) {
  const ModelConfig& cfg = params.config;
  const RoiGrid grid = cfg.grid();
  const PairTrunk& trunk = fwd.trunk;

  FeatureMap g_cls_a(trunk.a.cls.height, trunk.a.cls.width, trunk.a.cls.channels);
  FeatureMap g_reg_a(trunk.a.reg.height, trunk.a.reg.width, trunk.a.reg.channels);
  FeatureMap g_cls_b(trunk.b.cls.height, trunk.b.cls.width, trunk.b.cls.channels);
  FeatureMap g_reg_b(trunk.b.reg.height, trunk.b.reg.width, trunk.b.reg.channels);
  FeatureMap g_tra(trunk.pair.tra.height, trunk.pair.tra.width, trunk.pair.tra.channels);

  for (std::size_t i = 0; i < batch.rois.size(); ++i) {
    const RoiAssignment& r = batch.rois[i];
    const bool first = r.frame == 0;
    const FrameTrunk& ft = first ? trunk.a : trunk.b;
    const Box cells = roi_to_cells(r.roi, cfg.coarse_stride());
    const std::vector<double> g_logits =
        softmax_backward(fwd.preds.class_probs[i], pgrads.class_probs[i]);
    psroi_backward(ft.cls, cells, grid, PoolMode::kScore, g_logits,
                   first ? g_cls_a : g_cls_b);
    const BoxDelta& gb = pgrads.box_deltas[i];
    if (gb.dx != 0.0 || gb.dy != 0.0 || gb.dw != 0.0 || gb.dh != 0.0) {
      psroi_backward(ft.reg, cells, grid, PoolMode::kRegression, {gb.dx, gb.dy, gb.dw, gb.dh},
                     first ? g_reg_a : g_reg_b);
    }
  }
  for (std::size_t i = 0; i < batch.tracks.size(); ++i) {
    const TrackDelta& gt = pgrads.track_deltas[i];
    const Box cells = roi_to_cells(batch.tracks[i].roi, cfg.coarse_stride());
    psroi_backward(trunk.pair.tra, cells, grid, PoolMode::kRegression,
                   {gt.dx, gt.dy, gt.dw, gt.dh}, g_tra);
  }

  // track head back to the stacked features
  const FeatureMap g_stack =
      conv2d_backward(trunk.pair.stack, params.tra_head, 1, g_tra, grads.tra_head);
  const int nf = trunk.pair.corr_fine.offset_count();
  const int nc = trunk.pair.corr_coarse.offset_count();
  const int nr = grid.regression_channels();
  const FeatureMap g_corr_f_fm = slice_channels(g_stack, 0, nf);
  const FeatureMap g_corr_c_fm = slice_channels(g_stack, nf, nc);
  add_into(g_reg_a, slice_channels(g_stack, nf + nc, nr));
  add_into(g_reg_b, slice_channels(g_stack, nf + nc + nr, nr));

  const CorrelateGrads g_fine =
      correlate_backward(trunk.a.x2, trunk.b.x2, fine_options(cfg),
                         corr_from_feature_map(g_corr_f_fm, cfg.d_fine()));
  const CorrelateGrads g_coarse =
      correlate_backward(trunk.a.x4, trunk.b.x4, coarse_options(cfg),
                         corr_from_feature_map(g_corr_c_fm, cfg.d_coarse()));

  auto frame_backward = [&](const FrameTrunk& ft, const FeatureMap& image,
                            const FeatureMap& g_cls, const FeatureMap& g_reg,
                            const FeatureMap& g_x4_corr, const FeatureMap& g_x2_corr) {
    FeatureMap g_x4 = conv2d_backward(ft.x4, params.cls_head, 1, g_cls, grads.cls_head);
    add_into(g_x4, conv2d_backward(ft.x4, params.reg_head, 1, g_reg, grads.reg_head));
    add_into(g_x4, g_x4_corr);
    const FeatureMap g_x4p = relu_backward(ft.x4p, g_x4);
    FeatureMap g_x3 = conv2d_backward(ft.x3, params.conv4, 2, g_x4p, grads.conv4);
    const FeatureMap g_x3p = relu_backward(ft.x3p, g_x3);
    FeatureMap g_x2 = conv2d_backward(ft.x2, params.conv3, 1, g_x3p, grads.conv3);
    add_into(g_x2, g_x2_corr);
    const FeatureMap g_x2p = relu_backward(ft.x2p, g_x2);
    const FeatureMap g_x1 = conv2d_backward(ft.x1, params.conv2, 2, g_x2p, grads.conv2);
    const FeatureMap g_x1p = relu_backward(ft.x1p, g_x1);
    conv2d_backward(image, params.conv1, 1, g_x1p, grads.conv1);
  };
  frame_backward(trunk.a, image_a, g_cls_a, g_reg_a, g_coarse.a, g_fine.a);
  frame_backward(trunk.b, image_b, g_cls_b, g_reg_b, g_coarse.b, g_fine.b);
}

std::vector<Box> propose(const ModelParams& params, const FrameTrunk& trunk, int image_h,
                         int image_w, int top_k, double nms_iou) {
  if (top_k < 1) throw std::invalid_argument("propose: top_k must be positive");
  const ModelConfig& cfg = params.config;
  struct Cand {
    Box box;
    double score;
  };
  std::vector<Cand> cands;
  cands.reserve(static_cast<std::size_t>(trunk.x4.height) * trunk.x4.width *
                cfg.anchor_sizes.size());
  const double stride = cfg.coarse_stride();
  for (int i = 0; i < trunk.x4.height; ++i) {
    for (int j = 0; j < trunk.x4.width; ++j) {
      for (double s : cfg.anchor_sizes) {
        const Box anchor{(j + 0.5) * stride, (i + 0.5) * stride, s, s};
        const Box clipped = clip_box(anchor, image_w, image_h, 2.0);
        const auto probs = pool_class_probs(params, trunk.cls, clipped);
        cands.push_back({clipped, 1.0 - probs[0]});
      }
    }
  }
  std::vector<int> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return cands[a].score > cands[b].score; });
  std::vector<Box> out;
  std::vector<char> used(cands.size(), 0);
  for (int idx : order) {
    if (used[idx]) continue;
    out.push_back(cands[idx].box);
    if (static_cast<int>(out.size()) >= top_k) break;
    for (int other : order) {
      if (used[other]) continue;
      if (iou(cands[idx].box, cands[other].box) > nms_iou) used[other] = 1;
    }
  }
  return out;
}

std::vector<Box> propose(const ModelParams& params, const FeatureMap& image, int top_k,
                         double nms_iou) {
  const FrameTrunk trunk = run_frame_trunk(params, image);
  return propose(params, trunk, image.height, image.width, top_k, nms_iou);
}

namespace {

std::array<std::vector<GtBox>, 2> gt_pair(const VideoSample& v, int t0, int t1) {
  std::array<std::vector<GtBox>, 2> gts;
  for (const AnnotationRecord& a : v.annotations[t0]) gts[0].push_back({a.box, a.cls, a.track_id});
  for (const AnnotationRecord& a : v.annotations[t1]) gts[1].push_back({a.box, a.cls, a.track_id});
  return gts;
}

Box jitter_box(const Box& b, Rng& rng, double image_w, double image_h) {
  Box j = b;
  j.x += rng.uniform(-0.2, 0.2) * b.w;
  j.y += rng.uniform(-0.2, 0.2) * b.h;
  j.w *= std::exp(rng.uniform(-0.2, 0.2));
  j.h *= std::exp(rng.uniform(-0.2, 0.2));
  return clip_box(j, image_w, image_h, 2.0);
}

LossReport mean_report(const std::vector<LossReport>& reports) {
  LossReport m;
  if (reports.empty()) return m;
  for (const LossReport& r : reports) {
    m.cls += r.cls;
    m.reg += r.reg;
    m.tra += r.tra;
    m.total += r.total;
    m.lambda = r.lambda;
  }
  const double n = static_cast<double>(reports.size());
  m.cls /= n;
  m.reg /= n;
  m.tra /= n;
  m.total /= n;
  return m;
}

struct HoldoutPair {
  const VideoSample* video = nullptr;
  int t0 = 0, t1 = 0;
  RoiBatch batch;
};

}  // namespace

TrainResult train(const std::vector<VideoSample>& dataset, const ModelConfig& mcfg,
                  const TrainConfig& tcfg) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (const VideoSample& v : dataset) {
    if (v.frames.size() < 2) throw std::invalid_argument("train: videos need at least 2 frames");
    if (v.frames[0].height != mcfg.image_size || v.frames[0].width != mcfg.image_size) {
      throw std::invalid_argument("train: frame size does not match ModelConfig.image_size");
    }
  }
  if (tcfg.iterations < 1 || tcfg.batch_pairs < 1) {
    throw std::invalid_argument("train: bad iteration or batch settings");
  }

  const int n = static_cast<int>(dataset.size());
  int holdout = n >= 2 ? std::max(1, static_cast<int>(std::lround(tcfg.holdout_fraction * n))) : 0;
  holdout = std::min(holdout, n - 1);
  const int train_count = n - holdout;
  const double img_w = mcfg.image_size;
  const double img_h = mcfg.image_size;

  ModelParams params = init_params(mcfg, Rng::mix(tcfg.seed, 0x1717));

  // fixed held-out batches: ground-truth regions, jittered copies and a few
  // random boxes, so before/after losses are comparable
  std::vector<HoldoutPair> hold;
  {
    Rng hrng(Rng::mix(tcfg.seed, 0x401d));
    for (int v = train_count; v < n; ++v) {
      const VideoSample& video = dataset[v];
      const int mid = static_cast<int>(video.frames.size()) / 2;
      for (int t0 : {0, mid}) {
        const int t1 = t0 + 1;
        if (t1 >= static_cast<int>(video.frames.size())) continue;
        std::array<std::vector<Box>, 2> rois;
        const auto gts = gt_pair(video, t0, t1);
        for (int f = 0; f < 2; ++f) {
          for (const GtBox& g : gts[f]) {
            // objects stacked on top of each other have no clean label;
            // leave them out of the held-out positives
            double other = 0.0;
            for (const GtBox& o : gts[f])
              if (o.track_id != g.track_id) other = std::max(other, iou(g.box, o.box));
            if (other >= 0.2) continue;
            rois[f].push_back(g.box);
            // clear positive: retry the jitter until it stays well above the
            // assignment threshold, so the held-out labels are unambiguous
            for (int attempt = 0; attempt < 32; ++attempt) {
              const Box j = jitter_box(g.box, hrng, img_w, img_h);
              if (iou(j, g.box) >= 0.55) {
                rois[f].push_back(j);
                break;
              }
            }
          }
          for (int r = 0; r < 6; ++r) {
            // clear negative: keep sampling until the box is far from every
            // object of this frame
            for (int attempt = 0; attempt < 64; ++attempt) {
              const double s = hrng.uniform(6.0, 0.5 * mcfg.image_size);
              const double cx = hrng.uniform(0.5 * s, img_w - 0.5 * s);
              const double cy = hrng.uniform(0.5 * s, img_h - 0.5 * s);
              const Box cand{cx, cy, s, s};
              double worst = 0.0;
              for (const GtBox& g : gts[f]) worst = std::max(worst, iou(cand, g.box));
              if (worst < 0.25) {
                rois[f].push_back(cand);
                break;
              }
            }
          }
        }
        HoldoutPair hp;
        hp.video = &video;
        hp.t0 = t0;
        hp.t1 = t1;
        hp.batch = assign(rois, gts);
        if (!tcfg.use_track_loss) hp.batch.tracks.clear();
        hold.push_back(std::move(hp));
      }
    }
  }

  auto eval_holdout = [&](const ModelParams& p) {
    std::vector<LossReport> reports;
    for (const HoldoutPair& hp : hold) {
      const PairForward fwd = forward_pair(p, hp.video->frames[hp.t0], hp.video->frames[hp.t1],
                                           hp.batch);
      reports.push_back(loss(hp.batch, fwd.preds, tcfg.lambda));
    }
    return mean_report(reports);
  };

  TrainResult result;
  result.holdout_before = eval_holdout(params);

  ParamGrads velocity(params);
  Rng rng(Rng::mix(tcfg.seed, 0x5d5d));
  const int drop_at = static_cast<int>(tcfg.lr_drop_fraction * tcfg.iterations);

  for (int iter = 0; iter < tcfg.iterations; ++iter) {
    ParamGrads grads(params);
    std::vector<LossReport> reports;
    for (int bp = 0; bp < tcfg.batch_pairs; ++bp) {
      const VideoSample& video = dataset[rng.uniform_int(0, train_count - 1)];
      const int last = static_cast<int>(video.frames.size()) - 1;
      const int t0 = rng.uniform_int(0, last - 1);
      const bool still = rng.uniform() < tcfg.still_pair_prob;
      const int t1 = still ? t0 : t0 + 1;

      const FeatureMap& img_a = video.frames[t0];
      const FeatureMap& img_b = video.frames[t1];
      PairTrunk trunk = run_pair_trunk(params, img_a, img_b);

      std::array<std::vector<Box>, 2> rois = {
          propose(params, trunk.a, img_a.height, img_a.width, tcfg.proposals_per_frame),
          propose(params, trunk.b, img_b.height, img_b.width, tcfg.proposals_per_frame)};
      const auto gts = gt_pair(video, t0, t1);
      for (int f = 0; f < 2; ++f) {
        for (const GtBox& g : gts[f]) {
          rois[f].push_back(g.box);
          rois[f].push_back(jitter_box(g.box, rng, img_w, img_h));
          rois[f].push_back(jitter_box(g.box, rng, img_w, img_h));
        }
      }
      RoiBatch batch = assign(rois, gts);
      if (!tcfg.use_track_loss) batch.tracks.clear();

      PairForward fwd;
      fwd.trunk = std::move(trunk);
      fwd.preds = pool_predictions(params, fwd.trunk, batch);
      const LossReport rep = loss(batch, fwd.preds, tcfg.lambda);
      if (!std::isfinite(rep.total)) {
        throw std::runtime_error("train: loss diverged at iteration " + std::to_string(iter));
      }
      reports.push_back(rep);
      const PredictionGrads pg = loss_backward(batch, fwd.preds, tcfg.lambda);
      backward_pair(params, img_a, img_b, batch, fwd, pg, grads);
    }
    if (tcfg.batch_pairs > 1) grads.scale(1.0 / tcfg.batch_pairs);
    result.curve.push_back(mean_report(reports));

    const double lr = tcfg.learning_rate * (iter >= drop_at ? 0.1 : 1.0);
    auto pts = params.tensors();
    auto gts_ = grads.tensors();
    auto vts = velocity.tensors();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      ConvKernel* w = pts[i].second;
      ConvKernel* g = gts_[i];
      ConvKernel* v = vts[i];
      for (std::size_t j = 0; j < w->weights.size(); ++j) {
        v->weights[j] = tcfg.momentum * v->weights[j] - lr * g->weights[j];
        w->weights[j] += v->weights[j];
      }
      for (std::size_t j = 0; j < w->bias.size(); ++j) {
        v->bias[j] = tcfg.momentum * v->bias[j] - lr * g->bias[j];
        w->bias[j] += v->bias[j];
      }
    }
  }

  result.holdout_after = eval_holdout(params);
  result.params = std::move(params);
  return result;
}

namespace {

std::vector<Detection> detect_frame(const ModelParams& params, const FrameTrunk& trunk,
                                    int frame, int image_h, int image_w,
                                    const InferConfig& cfg) {
  const std::vector<Box> proposals =
      propose(params, trunk, image_h, image_w, cfg.proposals_per_frame, cfg.proposal_nms_iou);
  std::vector<Detection> raw;
  raw.reserve(proposals.size());
  for (const Box& p : proposals) {
    Detection d;
    d.frame = frame;
    d.scores = pool_class_probs(params, trunk.cls, p);
    d.box = clip_box(decode_box(p, pool_box_delta(params, trunk.reg, p)),
                     static_cast<double>(image_w), static_cast<double>(image_h), 2.0);
    raw.push_back(std::move(d));
  }
  std::vector<Detection> kept;
  for (int c = 1; c <= params.config.class_count; ++c) {
    for (Detection& d : nms_with_voting(raw, c, cfg.nms_iou, cfg.nms_keep)) {
      kept.push_back(std::move(d));
    }
  }
  return kept;
}

}  // namespace

VideoInference infer_video(const ModelParams& params, const VideoSample& video,
                           const InferConfig& cfg) {
  if (video.frames.empty()) throw std::invalid_argument("infer_video: empty video");
  if (cfg.temporal_stride < 1) throw std::invalid_argument("infer_video: bad temporal stride");
  const int frame_count = static_cast<int>(video.frames.size());
  VideoInference out;
  for (int t = 0; t < frame_count; t += cfg.temporal_stride) out.processed_frames.push_back(t);

  FrameTrunk prev;
  for (std::size_t i = 0; i < out.processed_frames.size(); ++i) {
    const int t = out.processed_frames[i];
    const FeatureMap& img = video.frames[t];
    FrameTrunk cur = run_frame_trunk(params, img);
    std::vector<Detection> dets = detect_frame(params, cur, t, img.height, img.width, cfg);
    if (i > 0) {
      // tracklets from the previous processed frame to this one, pooled at
      // the previous frame's regressed detection boxes
      const PairCoupling coupling = run_pair_coupling(params, prev, cur);
      const int t_prev = out.processed_frames[i - 1];
      for (const Detection& d : out.detections) {
        if (d.frame != t_prev) continue;
        Tracklet tr;
        tr.frame = t_prev;
        tr.stride = t - t_prev;
        tr.box_t = d.box;
        tr.box_next = clip_box(decode_track(d.box, pool_track_delta(params, coupling.tra, d.box)),
                               img.width, img.height, 2.0);
        out.tracklets.push_back(tr);
      }
    }
    for (Detection& d : dets) out.detections.push_back(std::move(d));
    prev = std::move(cur);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
  return {{"class_count", cfg.class_count},
          {"k", cfg.k},
          {"base_channels", cfg.base_channels},
          {"top_channels", cfg.top_channels},
          {"max_displacement", cfg.max_displacement},
          {"corr_stride", cfg.corr_stride},
          {"normalize_correlation", cfg.normalize_correlation},
          {"image_size", cfg.image_size},
          {"anchor_sizes", cfg.anchor_sizes}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.class_count = j.at("class_count").get<int>();
  cfg.k = j.at("k").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.top_channels = j.at("top_channels").get<int>();
  cfg.max_displacement = j.at("max_displacement").get<int>();
  cfg.corr_stride = j.at("corr_stride").get<int>();
  cfg.normalize_correlation = j.at("normalize_correlation").get<bool>();
  cfg.image_size = j.at("image_size").get<int>();
  cfg.anchor_sizes = j.at("anchor_sizes").get<std::vector<double>>();
  return cfg;
}

}  // namespace

void save_model(const ModelParams& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  for (const auto& [name, k] : params.tensors()) {
    tensors.push_back({{"name", name},
                       {"kh", k->kh},
                       {"kw", k->kw},
                       {"in", k->in_channels},
                       {"out", k->out_channels}});
    FeatureMap w(k->kh, k->kw, k->in_channels * k->out_channels);
    w.data = k->weights;
    write_dtt1(dir / (name + "_w.dtt1"), w);
    FeatureMap b(1, 1, k->out_channels);
    b.data = k->bias;
    write_dtt1(dir / (name + "_b.dtt1"), b);
  }
  const json manifest = {{"format", "detrack-model"},
                         {"config", config_to_json(params.config)},
                         {"tensors", tensors}};
  write_text_file(dir / "model.json", manifest.dump(2) + "\n");
}

ModelParams load_model(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir / "model.json"));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_model: bad model.json: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "detrack-model") {
    throw std::runtime_error("load_model: not a model directory: " + dir.string());
  }
  ModelParams params = init_params(config_from_json(manifest.at("config")), 0);
  auto live = params.tensors();
  for (const json& t : manifest.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    auto it = std::find_if(live.begin(), live.end(),
                           [&](const auto& pr) { return pr.first == name; });
    if (it == live.end()) throw std::runtime_error("load_model: unknown tensor " + name);
    ConvKernel* k = it->second;
    if (t.at("kh").get<int>() != k->kh || t.at("kw").get<int>() != k->kw ||
        t.at("in").get<int>() != k->in_channels || t.at("out").get<int>() != k->out_channels) {
      throw std::runtime_error("load_model: shape mismatch for tensor " + name);
    }
    const FeatureMap w = read_dtt1(dir / (name + "_w.dtt1"));
    if (w.data.size() != k->weights.size()) {
      throw std::runtime_error("load_model: weight payload mismatch for " + name);
    }
    k->weights = w.data;
    const FeatureMap b = read_dtt1(dir / (name + "_b.dtt1"));
    if (b.data.size() != k->bias.size()) {
      throw std::runtime_error("load_model: bias payload mismatch for " + name);
    }
    k->bias = b.data;
  }
  return params;
}

}  // namespace detrack
