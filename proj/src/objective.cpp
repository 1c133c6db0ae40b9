#include "detrack/objective.hpp"

#include <cmath>
#include <stdexcept>

#include "detrack/tensorops.hpp"

namespace detrack {

int RoiBatch::foreground() const {
  int n = 0;
  for (const auto& r : rois) n += r.label > 0 ? 1 : 0;
  return n;
}

RoiBatch assign(const std::array<std::vector<Box>, 2>& rois_per_frame,
                const std::array<std::vector<GtBox>, 2>& gt_per_frame,
                const AssignOptions& opt) {
  RoiBatch batch;
  for (int f = 0; f < 2; ++f) {
    const auto& rois = rois_per_frame[f];
    const auto& gts = gt_per_frame[f];
    const int base = batch.total();
    for (const Box& r : rois) {
      RoiAssignment a;
      a.frame = f;
      a.roi = r;
      double best = 0.0;
      int best_gt = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        const double ov = iou(r, gts[g].box);
        if (ov > best) {  // strict: ties keep the lowest ground-truth index
          best = ov;
          best_gt = static_cast<int>(g);
        }
      }
      if (best_gt >= 0 && best >= opt.iou_threshold) {
        a.label = gts[best_gt].cls;
        a.box_target = encode_box(r, gts[best_gt].box);
      }
      batch.rois.push_back(a);
    }
    if (opt.force_best_match) {
      for (std::size_t g = 0; g < gts.size(); ++g) {
        double best = -1.0;
        int best_roi = -1;
        for (std::size_t r = 0; r < rois.size(); ++r) {
          const double ov = iou(rois[r], gts[g].box);
          if (ov > best) {
            best = ov;
            best_roi = static_cast<int>(r);
          }
        }
        if (best_roi >= 0) {
          RoiAssignment& a = batch.rois[base + best_roi];
          a.label = gts[g].cls;
          a.box_target = encode_box(a.roi, gts[g].box);
        }
      }
    }
  }
  // track targets exist only for identities visible in both frames
  for (const GtBox& g0 : gt_per_frame[0]) {
    for (const GtBox& g1 : gt_per_frame[1]) {
      if (g0.track_id != g1.track_id) continue;
      TrackTarget t;
      t.roi = g0.box;
      t.delta = encode_track(g0.box, g1.box);
      t.cls = g0.cls;
      t.track_id = g0.track_id;
      batch.tracks.push_back(t);
      break;
    }
  }
  return batch;
}

namespace {

double component(const TrackDelta& d, int i) {
  switch (i) {
    case 0: return d.dx;
    case 1: return d.dy;
    case 2: return d.dw;
    default: return d.dh;
  }
}

void add_component(TrackDelta& d, int i, double v) {
  switch (i) {
    case 0: d.dx += v; break;
    case 1: d.dy += v; break;
    case 2: d.dw += v; break;
    default: d.dh += v; break;
  }
}

double smoothl1_sum(const TrackDelta& pred, const TrackDelta& target) {
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) acc += smooth_l1(component(pred, i) - component(target, i));
  return acc;
}

void check_shapes(const RoiBatch& batch, const BatchPredictions& preds) {
  if (preds.class_probs.size() != batch.rois.size() ||
      preds.box_deltas.size() != batch.rois.size() ||
      preds.track_deltas.size() != batch.tracks.size()) {
    throw std::invalid_argument("loss: prediction counts do not match batch");
  }
  for (std::size_t i = 0; i < batch.rois.size(); ++i) {
    const int label = batch.rois[i].label;
    if (label < 0 || label >= static_cast<int>(preds.class_probs[i].size())) {
      throw std::invalid_argument("loss: label outside predicted class range");
    }
    const double p = preds.class_probs[i][label];
    if (!(p > 0.0) || p > 1.0) {
      throw std::invalid_argument("loss: probability outside (0, 1] at a labeled class");
    }
  }
}

}  // namespace

LossReport loss(const RoiBatch& batch, const BatchPredictions& preds, double lambda) {
  check_shapes(batch, preds);
  LossReport rep;
  rep.lambda = lambda;
  const int n = batch.total();
  const int n_fg = batch.foreground();
  const int n_tra = batch.tracked();
  if (n > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.rois.size(); ++i) {
      acc += -std::log(preds.class_probs[i][batch.rois[i].label]);
    }
    rep.cls = acc / n;
  }
  if (n_fg > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.rois.size(); ++i) {
      if (batch.rois[i].label == 0) continue;
      acc += smoothl1_sum(preds.box_deltas[i], batch.rois[i].box_target);
    }
    rep.reg = acc / n_fg;
  }
  if (n_tra > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < batch.tracks.size(); ++i) {
      acc += smoothl1_sum(preds.track_deltas[i], batch.tracks[i].delta);
    }
    rep.tra = acc / n_tra;
  }
  rep.total = rep.cls + lambda * (rep.reg + rep.tra);
  return rep;
}

PredictionGrads loss_backward(const RoiBatch& batch, const BatchPredictions& preds,
                              double lambda) {
  check_shapes(batch, preds);
  PredictionGrads g;
  g.class_probs.resize(preds.class_probs.size());
  for (std::size_t i = 0; i < preds.class_probs.size(); ++i) {
    g.class_probs[i].assign(preds.class_probs[i].size(), 0.0);
  }
  g.box_deltas.assign(preds.box_deltas.size(), TrackDelta{});
  g.track_deltas.assign(preds.track_deltas.size(), TrackDelta{});

  const int n = batch.total();
  const int n_fg = batch.foreground();
  const int n_tra = batch.tracked();
  if (n > 0) {
    for (std::size_t i = 0; i < batch.rois.size(); ++i) {
      const int label = batch.rois[i].label;
      g.class_probs[i][label] = -1.0 / (preds.class_probs[i][label] * n);
    }
  }
  if (n_fg > 0) {
    for (std::size_t i = 0; i < batch.rois.size(); ++i) {
      if (batch.rois[i].label == 0) continue;
      for (int c = 0; c < 4; ++c) {
        const double x =
            component(preds.box_deltas[i], c) - component(batch.rois[i].box_target, c);
        add_component(g.box_deltas[i], c, lambda * smooth_l1_grad(x) / n_fg);
      }
    }
  }
  if (n_tra > 0) {
    for (std::size_t i = 0; i < batch.tracks.size(); ++i) {
      for (int c = 0; c < 4; ++c) {
        const double x =
            component(preds.track_deltas[i], c) - component(batch.tracks[i].delta, c);
        add_component(g.track_deltas[i], c, lambda * smooth_l1_grad(x) / n_tra);
      }
    }
  }
  return g;
}

}  // namespace detrack
