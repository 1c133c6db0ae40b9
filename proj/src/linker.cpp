#include "detrack/linker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace detrack {

namespace {

double class_score(const Detection& d, int cls) {
  if (cls < 0 || cls >= static_cast<int>(d.scores.size())) {
    throw std::invalid_argument("linker: class index outside score vector");
  }
  return d.scores[cls];
}

bool psi_hit(const Box& det_box, const Box& track_box) { return iou(det_box, track_box) > 0.5; }

// Path search shared by viterbi_link and extract_tubes: returns the chosen
// detection index per frame plus the path's summed pairwise score.
struct PathResult {
  std::vector<int> pick;
  double sum = 0.0;
};

PathResult best_path(const std::vector<std::vector<Detection>>& frames,
                     const std::vector<std::vector<Tracklet>>& tracklets, int cls) {
  const int t_count = static_cast<int>(frames.size());
  if (t_count == 0) throw std::invalid_argument("viterbi_link: no frames");
  if (tracklets.size() + 1 != frames.size()) {
    throw std::invalid_argument("viterbi_link: need one tracklet set per adjacent frame pair");
  }
  for (const auto& f : frames) {
    if (f.empty()) throw std::runtime_error("viterbi_link: no path, a frame has no detections");
  }

  // value[i] = best achievable sum from detection i of frame t to the end;
  // filled back to front so ties can prefer the smallest successor index,
  // which yields the lexicographically smallest optimal index sequence.
  std::vector<std::vector<double>> value(t_count);
  std::vector<std::vector<int>> succ(t_count);
  value[t_count - 1].assign(frames[t_count - 1].size(), 0.0);
  succ[t_count - 1].assign(frames[t_count - 1].size(), -1);
  for (int t = t_count - 2; t >= 0; --t) {
    const auto& cur = frames[t];
    const auto& nxt = frames[t + 1];
    value[t].assign(cur.size(), 0.0);
    succ[t].assign(cur.size(), -1);

    // bitset per detection of the tracklets it touches, so psi for a pair
    // (i, j) reduces to a word-wise intersection test
    const auto& trs = tracklets[t];
    const std::size_t words = (trs.size() + 63) / 64;
    std::vector<std::uint64_t> hit_cur(cur.size() * words, 0);
    std::vector<std::uint64_t> hit_nxt(nxt.size() * words, 0);
    for (std::size_t k = 0; k < trs.size(); ++k) {
      const std::uint64_t bit = 1ULL << (k % 64);
      for (std::size_t i = 0; i < cur.size(); ++i) {
        if (psi_hit(cur[i].box, trs[k].box_t)) hit_cur[i * words + k / 64] |= bit;
      }
      for (std::size_t j = 0; j < nxt.size(); ++j) {
        if (psi_hit(nxt[j].box, trs[k].box_next)) hit_nxt[j * words + k / 64] |= bit;
      }
    }

    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double p_i = class_score(cur[i], cls);
      double best = -std::numeric_limits<double>::infinity();
      int best_j = -1;
      for (std::size_t j = 0; j < nxt.size(); ++j) {
        double psi = 0.0;
        for (std::size_t w = 0; w < words; ++w) {
          if (hit_cur[i * words + w] & hit_nxt[j * words + w]) {
            psi = 1.0;
            break;
          }
        }
        const double s = p_i + class_score(nxt[j], cls) + psi;
        const double v = s + value[t + 1][j];
        if (v > best) {
          best = v;
          best_j = static_cast<int>(j);
        }
      }
      value[t][i] = best;
      succ[t][i] = best_j;
    }
  }

  PathResult res;
  double best = -std::numeric_limits<double>::infinity();
  int start = -1;
  for (std::size_t i = 0; i < frames[0].size(); ++i) {
    if (value[0][i] > best) {
      best = value[0][i];
      start = static_cast<int>(i);
    }
  }
  res.sum = best;
  for (int t = 0, i = start; t < t_count; ++t) {
    res.pick.push_back(i);
    i = succ[t][i];
  }
  return res;
}

}  // namespace

std::vector<Detection> nms_with_voting(const std::vector<Detection>& dets, int cls,
                                       double iou_thresh, int keep) {
  if (keep < 1) throw std::invalid_argument("nms_with_voting: keep must be positive");
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return class_score(dets[a], cls) > class_score(dets[b], cls);
  });
  std::vector<char> used(dets.size(), 0);
  std::vector<Detection> out;
  for (std::size_t oi = 0; oi < order.size() && static_cast<int>(out.size()) < keep; ++oi) {
    const int i = order[oi];
    if (used[i]) continue;
    used[i] = 1;
    double wsum = class_score(dets[i], cls);
    double x = dets[i].box.x * wsum, y = dets[i].box.y * wsum;
    double w = dets[i].box.w * wsum, h = dets[i].box.h * wsum;
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (used[j]) continue;
      if (iou(dets[i].box, dets[j].box) > iou_thresh) {
        used[j] = 1;
        const double wj = class_score(dets[j], cls);
        wsum += wj;
        x += dets[j].box.x * wj;
        y += dets[j].box.y * wj;
        w += dets[j].box.w * wj;
        h += dets[j].box.h * wj;
      }
    }
    Detection kept = dets[i];
    if (wsum > 0.0) kept.box = {x / wsum, y / wsum, w / wsum, h / wsum};
    out.push_back(kept);
  }
  return out;
}

double pair_score(const Detection& a, const Detection& b, const Tracklet& t, int cls) {
  if (a.frame != t.frame || b.frame != t.frame + t.stride) {
    throw std::invalid_argument("pair_score: frames do not match the tracklet endpoints");
  }
  const double psi = psi_hit(a.box, t.box_t) && psi_hit(b.box, t.box_next) ? 1.0 : 0.0;
  return class_score(a, cls) + class_score(b, cls) + psi;
}

Tube viterbi_link(const std::vector<std::vector<Detection>>& frames,
                  const std::vector<std::vector<Tracklet>>& tracklets, int cls) {
  const PathResult res = best_path(frames, tracklets, cls);
  Tube tube;
  tube.cls = cls;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    tube.detections.push_back(frames[t][res.pick[t]]);
  }
  tube.score = res.sum / static_cast<double>(frames.size());
  return tube;
}

std::vector<Tube> extract_tubes(std::vector<std::vector<Detection>> frames,
                                const std::vector<std::vector<Tracklet>>& tracklets, int cls,
                                const ExtractOptions& opt) {
  std::vector<Tube> tubes;
  while (static_cast<int>(tubes.size()) < opt.max_tubes) {
    bool drained = false;
    for (const auto& f : frames) drained |= f.empty();
    if (drained) break;
    const PathResult res = best_path(frames, tracklets, cls);
    Tube tube;
    tube.cls = cls;
    double prob_sum = 0.0;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      tube.detections.push_back(frames[t][res.pick[t]]);
      prob_sum += class_score(tube.detections.back(), cls);
    }
    if (prob_sum / static_cast<double>(frames.size()) < opt.min_mean_prob) break;
    tube.score = res.sum / static_cast<double>(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
      frames[t].erase(frames[t].begin() + res.pick[t]);
    }
    tubes.push_back(std::move(tube));
  }
  return tubes;
}

Tube rescore_tube(const Tube& tube, double alpha, bool causal) {
  if (!(alpha > 0.0) || alpha > 1.0) throw std::invalid_argument("rescore_tube: alpha outside (0, 1]");
  const int n = static_cast<int>(tube.detections.size());
  if (n == 0) return tube;
  std::vector<double> probs(n);
  for (int i = 0; i < n; ++i) probs[i] = class_score(tube.detections[i], tube.cls);

  Tube out = tube;
  if (!causal) {
    std::vector<double> sorted = probs;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    const int take = static_cast<int>(std::ceil(alpha * n));
    const double boost =
        std::accumulate(sorted.begin(), sorted.begin() + take, 0.0) / take;
    for (int i = 0; i < n; ++i) out.detections[i].scores[tube.cls] += boost;
  } else {
    // prefix-only view: position i sees scores[0..i]
    for (int i = 0; i < n; ++i) {
      std::vector<double> prefix(probs.begin(), probs.begin() + i + 1);
      std::sort(prefix.begin(), prefix.end(), std::greater<double>());
      const int take = static_cast<int>(std::ceil(alpha * (i + 1)));
      const double boost =
          std::accumulate(prefix.begin(), prefix.begin() + take, 0.0) / take;
      out.detections[i].scores[tube.cls] += boost;
    }
  }
  return out;
}

std::vector<Detection> average_tracked_scores(const std::vector<Detection>& dets_t,
                                              const std::vector<Tracklet>& tracklets,
                                              const std::vector<Detection>& dets_next,
                                              double iou_thresh) {
  std::vector<Detection> out = dets_t;
  for (Detection& d : out) {
    // best tracklet anchored at this detection
    const Tracklet* best_tr = nullptr;
    double best_ov = iou_thresh;
    for (const Tracklet& tr : tracklets) {
      const double ov = iou(d.box, tr.box_t);
      if (ov > best_ov) {
        best_ov = ov;
        best_tr = &tr;
      }
    }
    if (!best_tr) continue;
    // scores at the tracked region, taken from the adjacent frame's detections
    const Detection* mate = nullptr;
    double mate_ov = iou_thresh;
    for (const Detection& d2 : dets_next) {
      const double ov = iou(best_tr->box_next, d2.box);
      if (ov > mate_ov) {
        mate_ov = ov;
        mate = &d2;
      }
    }
    if (!mate) continue;
    if (mate->scores.size() != d.scores.size()) {
      throw std::invalid_argument("average_tracked_scores: score vector length mismatch");
    }
    for (std::size_t c = 0; c < d.scores.size(); ++c) {
      d.scores[c] = 0.5 * (d.scores[c] + mate->scores[c]);
    }
  }
  return out;
}

}  // namespace detrack
