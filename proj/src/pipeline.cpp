#include "detrack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "detrack/objective.hpp"
#include "detrack/rng.hpp"
#include "detrack/tensorops.hpp"
#include "detrack/util.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace detrack::pipeline {

namespace {

std::string csv_num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string video_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vid_%03d", i);
  return buf;
}

json gen_config_to_json(const GenConfig& c) {
  json j{{"class_count", c.class_count},
         {"objects_per_video", c.objects_per_video},
         {"frames", c.frames},
         {"image_size", c.image_size},
         {"min_speed", c.min_speed},
         {"max_speed", c.max_speed},
         {"jitter", c.jitter},
         {"scale_change", c.scale_change},
         {"noise", c.noise},
         {"occluder_prob", c.occluder_prob},
         {"min_object_size", c.min_object_size},
         {"max_object_size", c.max_object_size}};
  if (c.fixed_velocity)
    j["fixed_velocity"] = {c.fixed_velocity->first, c.fixed_velocity->second};
  return j;
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  c.class_count = j.at("class_count").get<int>();
  c.objects_per_video = j.at("objects_per_video").get<int>();
  c.frames = j.at("frames").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.min_speed = j.at("min_speed").get<double>();
  c.max_speed = j.at("max_speed").get<double>();
  c.jitter = j.at("jitter").get<double>();
  c.scale_change = j.at("scale_change").get<double>();
  c.noise = j.at("noise").get<double>();
  c.occluder_prob = j.at("occluder_prob").get<double>();
  c.min_object_size = j.at("min_object_size").get<double>();
  c.max_object_size = j.at("max_object_size").get<double>();
  if (j.contains("fixed_velocity")) {
    const json& v = j.at("fixed_velocity");
    c.fixed_velocity = std::make_pair(v.at(0).get<double>(), v.at(1).get<double>());
  }
  return c;
}

// Content hash of a file or of a whole directory tree (sorted relative
// paths; run manifests themselves are excluded so re-hashing is stable).
std::string hash_path(const fs::path& p) {
  if (fs::is_regular_file(p)) return hash_file(p);
  if (!fs::is_directory(p)) throw std::runtime_error("hash_path: no such path: " + p.string());
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (!e.is_regular_file()) continue;
    if (e.path().filename() == "run_manifest.json") continue;
    lines.push_back(fs::relative(e.path(), p).generic_string() + "=" + hash_file(e.path()));
  }
  std::sort(lines.begin(), lines.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& s : lines) h = fnv1a64(s.data(), s.size(), h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_run_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                        std::uint64_t seed, const std::vector<fs::path>& inputs) {
  json j{{"format", "detrack-run"}, {"command", command}, {"config", config}, {"seed", seed}};
  json jin = json::array();
  for (const fs::path& p : inputs)
    jin.push_back({{"path", p.generic_string()}, {"hash", hash_path(p)}});
  j["inputs"] = jin;
  json jout = json::array();
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
    if (!e.is_regular_file()) continue;
    if (e.path().filename() == "run_manifest.json") continue;
    names.push_back(fs::relative(e.path(), out_dir).generic_string());
  }
  std::sort(names.begin(), names.end());
  for (const std::string& n : names)
    jout.push_back({{"path", n}, {"hash", hash_file(out_dir / n)}});
  j["outputs"] = jout;
  write_text_file(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

json infer_config_to_json(const InferConfig& c) {
  return json{{"temporal_stride", c.temporal_stride},
              {"proposals_per_frame", c.proposals_per_frame},
              {"proposal_nms_iou", c.proposal_nms_iou},
              {"nms_iou", c.nms_iou},
              {"nms_keep", c.nms_keep}};
}

}  // namespace

void generate_dataset(const GenConfig& cfg, int video_count, std::uint64_t seed,
                      const fs::path& out_dir) {
  if (video_count < 1) throw std::invalid_argument("generate_dataset: video_count must be >= 1");
  fs::create_directories(out_dir);
  std::vector<VideoSample> videos(video_count);
  parallel_for(video_count, [&](int i) {
    videos[i] = generate(cfg, Rng::mix(seed, static_cast<std::uint64_t>(i)));
  });
  json jv = json::array();
  for (int i = 0; i < video_count; ++i) {
    const std::string name = video_name(i);
    save_video(videos[i], out_dir / name);
    jv.push_back({{"name", name}, {"seed", videos[i].seed}});
  }
  json manifest{{"format", "detrack-dataset"},
                {"seed", seed},
                {"config", gen_config_to_json(cfg)},
                {"videos", jv}};
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  write_run_manifest(out_dir, "gen", gen_config_to_json(cfg), seed, {});
}

namespace {

Dataset load_dataset_impl(const fs::path& dir, bool with_frames) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath))
    throw std::runtime_error("load_dataset: missing manifest: " + mpath.string());
  json m = json::parse(read_text_file(mpath));
  if (m.value("format", "") != std::string("detrack-dataset"))
    throw std::runtime_error("load_dataset: not a dataset manifest: " + mpath.string());
  Dataset d;
  d.config = gen_config_from_json(m.at("config"));
  d.seed = m.at("seed").get<std::uint64_t>();
  for (const json& jv : m.at("videos")) {
    const std::string name = jv.at("name").get<std::string>();
    d.names.push_back(name);
    VideoSample v;
    if (with_frames) {
      v = load_video(dir / name);
    } else {
      v.annotations.assign(static_cast<std::size_t>(d.config.frames), {});
      for (const AnnotationRecord& a : read_annotations(dir / name / "annotations.jsonl")) {
        if (a.frame < 0 || a.frame >= d.config.frames)
          throw std::runtime_error("load_dataset: annotation frame out of range in " + name);
        v.annotations[static_cast<std::size_t>(a.frame)].push_back(a);
      }
    }
    v.seed = jv.at("seed").get<std::uint64_t>();
    d.videos.push_back(std::move(v));
  }
  return d;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) { return load_dataset_impl(dir, true); }

Dataset load_dataset_annotations(const fs::path& dir) { return load_dataset_impl(dir, false); }

TrainSummary run_train(const TrainArgs& args) {
  Dataset data = load_dataset(args.data_dir);
  ModelConfig mcfg = args.model;
  mcfg.class_count = data.config.class_count;
  mcfg.image_size = data.config.image_size;
  TrainResult res = train(data.videos, mcfg, args.train_cfg);

  fs::create_directories(args.out_dir);
  save_model(res.params, args.out_dir);

  std::string csv = "iteration,cls,reg,tra,total\n";
  for (std::size_t i = 0; i < res.curve.size(); ++i) {
    const LossReport& r = res.curve[i];
    csv += std::to_string(i) + "," + csv_num(r.cls) + "," + csv_num(r.reg) + "," +
           csv_num(r.tra) + "," + csv_num(r.total) + "\n";
  }
  write_text_file(args.out_dir / "loss_curve.csv", csv);

  json report{{"holdout_before",
               {{"cls", res.holdout_before.cls},
                {"reg", res.holdout_before.reg},
                {"tra", res.holdout_before.tra},
                {"total", res.holdout_before.total}}},
              {"holdout_after",
               {{"cls", res.holdout_after.cls},
                {"reg", res.holdout_after.reg},
                {"tra", res.holdout_after.tra},
                {"total", res.holdout_after.total}}}};
  write_text_file(args.out_dir / "train_report.json", report.dump(2) + "\n");

  json cfg{{"iterations", args.train_cfg.iterations},
           {"batch_pairs", args.train_cfg.batch_pairs},
           {"learning_rate", args.train_cfg.learning_rate},
           {"momentum", args.train_cfg.momentum},
           {"lr_drop_fraction", args.train_cfg.lr_drop_fraction},
           {"proposals_per_frame", args.train_cfg.proposals_per_frame},
           {"still_pair_prob", args.train_cfg.still_pair_prob},
           {"use_track_loss", args.train_cfg.use_track_loss},
           {"lambda", args.train_cfg.lambda},
           {"holdout_fraction", args.train_cfg.holdout_fraction}};
  write_run_manifest(args.out_dir, "train", cfg, args.train_cfg.seed, {args.data_dir});

  TrainSummary s;
  s.holdout_before = res.holdout_before;
  s.holdout_after = res.holdout_after;
  s.first_loss = res.curve.empty() ? 0.0 : res.curve.front().total;
  s.final_loss = res.curve.empty() ? 0.0 : res.curve.back().total;
  return s;
}

InferenceOutputs infer_dataset(const ModelParams& params, const Dataset& data,
                               const InferConfig& cfg) {
  if (data.videos.empty()) throw std::runtime_error("infer_dataset: empty dataset");
  const int n = static_cast<int>(data.videos.size());
  std::vector<InferenceOutputs> per_video(n);
  parallel_for(n, [&](int i) {
    if (data.videos[i].frames.empty())
      throw std::runtime_error("infer_dataset: dataset was loaded without frames");
    VideoInference vi = infer_video(params, data.videos[i], cfg);
    InferenceOutputs& out = per_video[i];
    for (const Detection& det : vi.detections)
      out.detections.push_back({data.names[i], det.frame, det.scores, det.box});
    for (const Tracklet& t : vi.tracklets)
      out.tracklets.push_back(
          {data.names[i], t.frame, t.stride, t.box_t, t.box_next, encode_track(t.box_t, t.box_next)});
  });
  InferenceOutputs all;
  for (const InferenceOutputs& o : per_video) {
    all.detections.insert(all.detections.end(), o.detections.begin(), o.detections.end());
    all.tracklets.insert(all.tracklets.end(), o.tracklets.begin(), o.tracklets.end());
  }
  return all;
}

void run_infer(const InferArgs& args) {
  ModelParams params = load_model(args.model_dir);
  Dataset data = load_dataset(args.data_dir);
  InferenceOutputs out = infer_dataset(params, data, args.cfg);
  fs::create_directories(args.out_dir);
  write_detections(args.out_dir / "detections.jsonl", out.detections);
  write_tracklets(args.out_dir / "tracklets.jsonl", out.tracklets);
  write_run_manifest(args.out_dir, "infer", infer_config_to_json(args.cfg), 0,
                     {args.model_dir, args.data_dir});
}

namespace {

struct VideoGroup {
  std::string name;
  std::vector<int> frames;                        // sorted unique frame ids
  std::vector<std::vector<Detection>> dets;       // per frame
  std::vector<std::vector<int>> record_index;     // per frame, global record index
  std::vector<std::vector<Tracklet>> tracklets;   // per adjacent frame pair
};

std::vector<VideoGroup> group_by_video(const std::vector<DetectionRecord>& dets,
                                       const std::vector<TrackletRecord>& tracklets) {
  std::vector<VideoGroup> groups;
  std::unordered_map<std::string, int> index;
  for (std::size_t r = 0; r < dets.size(); ++r) {
    const DetectionRecord& d = dets[r];
    auto it = index.find(d.video);
    if (it == index.end()) {
      it = index.emplace(d.video, static_cast<int>(groups.size())).first;
      groups.push_back(VideoGroup{d.video, {}, {}, {}, {}});
    }
    VideoGroup& g = groups[static_cast<std::size_t>(it->second)];
    auto fit = std::lower_bound(g.frames.begin(), g.frames.end(), d.frame);
    std::size_t slot;
    if (fit == g.frames.end() || *fit != d.frame) {
      slot = static_cast<std::size_t>(fit - g.frames.begin());
      g.frames.insert(fit, d.frame);
      g.dets.emplace(g.dets.begin() + static_cast<std::ptrdiff_t>(slot));
      g.record_index.emplace(g.record_index.begin() + static_cast<std::ptrdiff_t>(slot));
    } else {
      slot = static_cast<std::size_t>(fit - g.frames.begin());
    }
    g.dets[slot].push_back({d.frame, d.box, d.class_scores});
    g.record_index[slot].push_back(static_cast<int>(r));
  }
  for (VideoGroup& g : groups)
    g.tracklets.assign(g.frames.size() > 1 ? g.frames.size() - 1 : 0, {});
  for (const TrackletRecord& t : tracklets) {
    auto it = index.find(t.video);
    if (it == index.end()) continue;  // tracklets for videos without detections are moot
    VideoGroup& g = groups[static_cast<std::size_t>(it->second)];
    auto fit = std::lower_bound(g.frames.begin(), g.frames.end(), t.frame);
    if (fit == g.frames.end() || *fit != t.frame) continue;
    const std::size_t slot = static_cast<std::size_t>(fit - g.frames.begin());
    if (slot + 1 >= g.frames.size() || g.frames[slot + 1] != t.frame + t.stride) continue;
    g.tracklets[slot].push_back({t.frame, t.stride, t.box_t, t.box_next});
  }
  return groups;
}

bool same_detection(const Detection& a, const Detection& b) {
  return a.frame == b.frame && a.box.x == b.box.x && a.box.y == b.box.y && a.box.w == b.box.w &&
         a.box.h == b.box.h && a.scores == b.scores;
}

}  // namespace

LinkOutputs link_records(const std::vector<DetectionRecord>& dets,
                         const std::vector<TrackletRecord>& tracklets, int class_count,
                         const LinkSettings& settings) {
  if (dets.empty()) throw std::runtime_error("link_records: no detections");
  if (class_count <= 0) class_count = static_cast<int>(dets.front().class_scores.size()) - 1;
  if (class_count <= 0) throw std::runtime_error("link_records: cannot derive class count");

  std::vector<VideoGroup> groups = group_by_video(dets, tracklets);
  std::vector<std::vector<double>> boosted(dets.size());
  std::vector<std::vector<TubeRecord>> tubes_per_video(groups.size());

  parallel_for(static_cast<int>(groups.size()), [&](int gi) {
    VideoGroup& g = groups[static_cast<std::size_t>(gi)];
    if (settings.average_tracked && g.frames.size() > 1) {
      std::vector<std::vector<Detection>> averaged = g.dets;
      for (std::size_t i = 0; i + 1 < g.frames.size(); ++i)
        averaged[i] = average_tracked_scores(g.dets[i], g.tracklets[i], g.dets[i + 1]);
      g.dets = std::move(averaged);
    }
    for (std::size_t f = 0; f < g.dets.size(); ++f)
      for (std::size_t d = 0; d < g.dets[f].size(); ++d)
        boosted[static_cast<std::size_t>(g.record_index[f][d])] = g.dets[f][d].scores;

    for (int cls = 1; cls <= class_count; ++cls) {
      std::vector<Tube> tubes = extract_tubes(g.dets, g.tracklets, cls, settings.extract);
      std::vector<std::vector<char>> claimed(g.dets.size());
      for (std::size_t f = 0; f < g.dets.size(); ++f) claimed[f].assign(g.dets[f].size(), 0);
      for (const Tube& tube : tubes) {
        Tube rescored = rescore_tube(tube, settings.alpha, settings.causal);
        TubeRecord rec;
        rec.video = g.name;
        rec.cls = cls;
        rec.score = rescored.score;
        for (std::size_t m = 0; m < rescored.detections.size(); ++m) {
          const Detection& member = tube.detections[m];
          auto fit = std::lower_bound(g.frames.begin(), g.frames.end(), member.frame);
          const std::size_t slot = static_cast<std::size_t>(fit - g.frames.begin());
          int found = -1;
          for (std::size_t d = 0; d < g.dets[slot].size(); ++d) {
            if (!claimed[slot][d] && same_detection(g.dets[slot][d], member)) {
              found = static_cast<int>(d);
              break;
            }
          }
          if (found < 0) throw std::runtime_error("link_records: tube member lost its source");
          claimed[slot][static_cast<std::size_t>(found)] = 1;
          const std::size_t rec_idx =
              static_cast<std::size_t>(g.record_index[slot][static_cast<std::size_t>(found)]);
          boosted[rec_idx][static_cast<std::size_t>(cls)] =
              rescored.detections[m].scores[static_cast<std::size_t>(cls)];
          rec.frames.push_back(member.frame);
          rec.boxes.push_back(member.box);
          rec.scores.push_back(rescored.detections[m].scores[static_cast<std::size_t>(cls)]);
        }
        tubes_per_video[static_cast<std::size_t>(gi)].push_back(std::move(rec));
      }
    }
  });

  LinkOutputs out;
  out.detections = dets;
  for (std::size_t r = 0; r < dets.size(); ++r)
    if (!boosted[r].empty()) out.detections[r].class_scores = boosted[r];
  for (std::vector<TubeRecord>& tv : tubes_per_video)
    for (TubeRecord& t : tv) out.tubes.push_back(std::move(t));
  return out;
}

void run_link(const LinkArgs& args) {
  std::vector<DetectionRecord> dets = read_detections(args.detections_path);
  std::vector<TrackletRecord> tracklets = read_tracklets(args.tracklets_path);
  LinkOutputs out = link_records(dets, tracklets, args.class_count, args.settings);
  fs::create_directories(args.out_dir);
  write_detections(args.out_dir / "detections.jsonl", out.detections);
  write_tubes(args.out_dir / "tubes.jsonl", out.tubes);
  json cfg{{"alpha", args.settings.alpha},
           {"causal", args.settings.causal},
           {"average_tracked", args.settings.average_tracked},
           {"max_tubes", args.settings.extract.max_tubes},
           {"min_mean_prob", args.settings.extract.min_mean_prob}};
  write_run_manifest(args.out_dir, "link", cfg, 0, {args.detections_path, args.tracklets_path});
}

EvalResult eval_records(const std::vector<DetectionRecord>& dets, const Dataset& data,
                        double iou_thresh, bool processed_only) {
  std::unordered_map<std::string, int> video_index;
  for (std::size_t i = 0; i < data.names.size(); ++i)
    video_index.emplace(data.names[i], static_cast<int>(i));

  std::vector<std::set<int>> processed(data.names.size());
  std::vector<EvalDetection> eval_dets;
  eval_dets.reserve(dets.size());
  for (const DetectionRecord& d : dets) {
    auto it = video_index.find(d.video);
    if (it == video_index.end())
      throw std::runtime_error("eval_records: detections reference unknown video " + d.video);
    processed[static_cast<std::size_t>(it->second)].insert(d.frame);
    eval_dets.push_back({d.video, d.frame, d.box, d.class_scores});
  }

  std::vector<EvalGroundTruth> gts;
  for (std::size_t v = 0; v < data.videos.size(); ++v) {
    const auto& per_frame = data.videos[v].annotations;
    for (std::size_t f = 0; f < per_frame.size(); ++f) {
      if (processed_only && processed[v].count(static_cast<int>(f)) == 0) continue;
      for (const AnnotationRecord& a : per_frame[f])
        gts.push_back({data.names[v], static_cast<int>(f), a.cls, a.box});
    }
  }
  return evaluate(eval_dets, gts, data.config.class_count, iou_thresh);
}

EvalResult run_eval(const EvalArgs& args) {
  std::vector<DetectionRecord> dets = read_detections(args.detections_path);
  Dataset data = load_dataset_annotations(args.data_dir);
  EvalResult res = eval_records(dets, data, args.iou_thresh, args.processed_only);

  fs::create_directories(args.out_dir);
  json classes = json::object();
  for (const auto& [cls, ce] : res.per_class) {
    json jc{{"ground_truth", ce.gt_count}, {"detections", ce.det_count}};
    if (std::isnan(ce.ap))
      jc["ap"] = nullptr;
    else
      jc["ap"] = ce.ap;
    classes[std::to_string(cls)] = jc;
  }
  json report{{"format", "detrack-eval"},
              {"iou_threshold", args.iou_thresh},
              {"processed_only", args.processed_only},
              {"mean_ap", res.mean_ap},
              {"classes", classes}};
  write_text_file(args.out_dir / "report.json", report.dump(2) + "\n");

  if (args.write_pr_curves) {
    for (const auto& [cls, ce] : res.per_class) {
      std::string csv = "recall,precision,score\n";
      for (const PrPoint& p : ce.curve)
        csv += csv_num(p.recall) + "," + csv_num(p.precision) + "," + csv_num(p.score) + "\n";
      write_text_file(args.out_dir / ("pr_class_" + std::to_string(cls) + ".csv"), csv);
    }
  }
  json cfg{{"iou_threshold", args.iou_thresh}, {"processed_only", args.processed_only}};
  write_run_manifest(args.out_dir, "eval", cfg, 0, {args.detections_path, args.data_dir});
  return res;
}

// ---------------------------------------------------------------------------
// Finite-difference audit.

namespace {

FeatureMap random_map(int h, int w, int d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  FeatureMap m(h, w, d);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

GradCheckEntry check_correlate(bool normalize) {
  Rng rng(normalize ? 71 : 72);
  FeatureMap a = random_map(5, 6, 3, rng);
  FeatureMap b = random_map(5, 6, 3, rng);
  CorrelateOptions opt;
  opt.max_displacement = 2;
  opt.stride = 2;
  opt.normalize = normalize;
  CorrelationMap ref = correlate(a, b, opt);
  std::vector<double> w = random_vec(ref.data.size(), rng);

  std::vector<double> x = a.data;
  x.insert(x.end(), b.data.begin(), b.data.end());
  auto f = [&](const std::vector<double>& v) {
    FeatureMap aa = a, bb = b;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(a.data.size()), aa.data.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(a.data.size()), v.end(), bb.data.begin());
    return dot(correlate(aa, bb, opt).data, w);
  };
  CorrelationMap gout = ref;
  gout.data = w;
  CorrelateGrads g = correlate_backward(a, b, opt, gout);
  std::vector<double> analytic = g.a.data;
  analytic.insert(analytic.end(), g.b.data.begin(), g.b.data.end());
  return {normalize ? "correlate" : "correlate_unnormalized", grad_check(f, x, analytic)};
}

GradCheckEntry check_psroi(PoolMode mode) {
  Rng rng(mode == PoolMode::kScore ? 73 : 74);
  RoiGrid grid{2, 2};
  const int ch = mode == PoolMode::kScore ? grid.score_channels() : grid.regression_channels();
  FeatureMap maps = random_map(8, 8, ch, rng);
  std::vector<Box> rois = {{1.2, 0.7, 5.3, 4.9}, {3.0, 2.0, 4.0, 5.5}};
  std::vector<std::vector<double>> w;
  for (std::size_t r = 0; r < rois.size(); ++r)
    w.push_back(random_vec(static_cast<std::size_t>(grid.slots(mode)), rng));

  auto f = [&](const std::vector<double>& v) {
    FeatureMap mm = maps;
    mm.data = v;
    double s = 0.0;
    for (std::size_t r = 0; r < rois.size(); ++r)
      s += dot(psroi_pool(mm, rois[r], grid, mode), w[r]);
    return s;
  };
  FeatureMap grad(8, 8, ch);
  for (std::size_t r = 0; r < rois.size(); ++r)
    psroi_backward(maps, rois[r], grid, mode, w[r], grad);
  return {mode == PoolMode::kScore ? "psroi_pool_score" : "psroi_pool_regression",
          grad_check(f, maps.data, grad.data)};
}

GradCheckEntry check_conv2d() {
  Rng rng(75);
  FeatureMap xm = random_map(5, 5, 3, rng);
  ConvKernel k(3, 3, 3, 4);
  for (double& v : k.weights) v = rng.uniform(-0.5, 0.5);
  for (double& v : k.bias) v = rng.uniform(-0.5, 0.5);
  const int stride = 2;
  FeatureMap ref = conv2d(xm, k, stride);
  std::vector<double> w = random_vec(ref.data.size(), rng);

  std::vector<double> x = xm.data;
  x.insert(x.end(), k.weights.begin(), k.weights.end());
  x.insert(x.end(), k.bias.begin(), k.bias.end());
  auto f = [&](const std::vector<double>& v) {
    FeatureMap xx = xm;
    ConvKernel kk = k;
    std::size_t off = 0;
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(xx.data.size()), xx.data.begin());
    off += xx.data.size();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
              v.begin() + static_cast<std::ptrdiff_t>(off + kk.weights.size()),
              kk.weights.begin());
    off += kk.weights.size();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(off), v.end(), kk.bias.begin());
    return dot(conv2d(xx, kk, stride).data, w);
  };
  FeatureMap gout = ref;
  gout.data = w;
  ConvKernel gk(3, 3, 3, 4);
  FeatureMap gx = conv2d_backward(xm, k, stride, gout, gk);
  std::vector<double> analytic = gx.data;
  analytic.insert(analytic.end(), gk.weights.begin(), gk.weights.end());
  analytic.insert(analytic.end(), gk.bias.begin(), gk.bias.end());
  return {"conv2d", grad_check(f, x, analytic)};
}

GradCheckEntry check_relu() {
  Rng rng(76);
  FeatureMap xm(4, 5, 3);
  // keep activations away from the kink at zero
  for (double& v : xm.data) v = rng.uniform(0.05, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  std::vector<double> w = random_vec(xm.data.size(), rng);
  auto f = [&](const std::vector<double>& v) {
    FeatureMap xx = xm;
    xx.data = v;
    return dot(relu(xx).data, w);
  };
  FeatureMap gout = xm;
  gout.data = w;
  FeatureMap g = relu_backward(xm, gout);
  return {"relu", grad_check(f, xm.data, g.data)};
}

GradCheckEntry check_softmax_ce() {
  Rng rng(77);
  std::vector<double> logits = random_vec(6, rng);
  const std::size_t label = 2;
  auto f = [&](const std::vector<double>& v) { return -std::log(softmax(v)[label]); };
  std::vector<double> p = softmax(logits);
  std::vector<double> gp(p.size(), 0.0);
  gp[label] = -1.0 / p[label];
  return {"softmax_cross_entropy", grad_check(f, logits, softmax_backward(p, gp))};
}

GradCheckEntry check_smooth_l1() {
  Rng rng(78);
  std::vector<double> x;
  while (x.size() < 8) {
    double v = rng.uniform(-2.0, 2.0);
    if (std::abs(std::abs(v) - 1.0) < 0.1) continue;  // stay clear of the kink
    x.push_back(v);
  }
  auto f = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += smooth_l1(e);
    return s;
  };
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = smooth_l1_grad(x[i]);
  return {"smooth_l1", grad_check(f, x, g)};
}

GradCheckEntry check_loss() {
  RoiBatch batch;
  batch.rois.push_back({0, Box{4, 4, 6, 6}, 1, encode_box(Box{4, 4, 6, 6}, Box{5, 4.5, 6, 7})});
  batch.rois.push_back({0, Box{12, 10, 5, 5}, 0, {}});
  batch.rois.push_back({1, Box{6, 5, 6, 6}, 2, encode_box(Box{6, 5, 6, 6}, Box{6.5, 5, 7, 6})});
  batch.tracks.push_back({Box{4, 4, 6, 6}, encode_track(Box{4, 4, 6, 6}, Box{6, 5, 6, 6}), 1, 7});

  BatchPredictions preds;
  preds.class_probs = {{0.2, 0.5, 0.2, 0.1}, {0.7, 0.1, 0.1, 0.1}, {0.1, 0.2, 0.6, 0.1}};
  preds.box_deltas = {{0.1, -0.05, 0.2, 0.1}, {0.0, 0.0, 0.0, 0.0}, {0.05, 0.1, -0.1, 0.2}};
  preds.track_deltas = {{0.2, 0.1, 0.05, -0.1}};

  auto flatten = [](const BatchPredictions& p) {
    std::vector<double> v;
    for (const auto& row : p.class_probs) v.insert(v.end(), row.begin(), row.end());
    for (const BoxDelta& d : p.box_deltas) {
      v.push_back(d.dx);
      v.push_back(d.dy);
      v.push_back(d.dw);
      v.push_back(d.dh);
    }
    for (const TrackDelta& d : p.track_deltas) {
      v.push_back(d.dx);
      v.push_back(d.dy);
      v.push_back(d.dw);
      v.push_back(d.dh);
    }
    return v;
  };
  auto unflatten = [&](const std::vector<double>& v) {
    BatchPredictions p = preds;
    std::size_t off = 0;
    for (auto& row : p.class_probs)
      for (double& e : row) e = v[off++];
    for (BoxDelta& d : p.box_deltas) {
      d.dx = v[off++];
      d.dy = v[off++];
      d.dw = v[off++];
      d.dh = v[off++];
    }
    for (TrackDelta& d : p.track_deltas) {
      d.dx = v[off++];
      d.dy = v[off++];
      d.dw = v[off++];
      d.dh = v[off++];
    }
    return p;
  };

  auto f = [&](const std::vector<double>& v) { return loss(batch, unflatten(v), 1.0).total; };
  PredictionGrads pg = loss_backward(batch, preds, 1.0);
  BatchPredictions as_preds;
  as_preds.class_probs = pg.class_probs;
  as_preds.box_deltas = pg.box_deltas;
  as_preds.track_deltas = pg.track_deltas;
  return {"multi_task_loss", grad_check(f, flatten(preds), flatten(as_preds))};
}

GradCheckEntry check_network() {
  ModelConfig mc;
  mc.class_count = 2;
  mc.k = 2;
  mc.base_channels = 6;
  mc.top_channels = 8;
  mc.max_displacement = 3;
  mc.corr_stride = 2;
  mc.image_size = 24;
  mc.anchor_sizes = {8.0, 12.0};
  ModelParams params = init_params(mc, 11);

  Rng rng(13);
  FeatureMap im_a = random_map(24, 24, 3, rng, 0.0, 1.0);
  FeatureMap im_b = random_map(24, 24, 3, rng, 0.0, 1.0);
  GtBox gt_a{Box{7, 9, 8, 8}, 1, 5};
  GtBox gt_b{Box{9, 10, 8, 8}, 1, 5};
  std::array<std::vector<Box>, 2> rois = {
      std::vector<Box>{gt_a.box, Box{16, 14, 7, 7}},
      std::vector<Box>{gt_b.box, Box{5, 17, 6, 6}},
  };
  RoiBatch batch = assign(rois, {std::vector<GtBox>{gt_a}, std::vector<GtBox>{gt_b}});

  auto pack = [](const ModelParams& p) {
    std::vector<double> v;
    for (const auto& [name, k] : p.tensors()) {
      (void)name;
      v.insert(v.end(), k->weights.begin(), k->weights.end());
      v.insert(v.end(), k->bias.begin(), k->bias.end());
    }
    return v;
  };
  auto unpack = [&](const std::vector<double>& v) {
    ModelParams p = params;
    std::size_t off = 0;
    for (auto& [name, k] : p.tensors()) {
      (void)name;
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                v.begin() + static_cast<std::ptrdiff_t>(off + k->weights.size()),
                k->weights.begin());
      off += k->weights.size();
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(off),
                v.begin() + static_cast<std::ptrdiff_t>(off + k->bias.size()), k->bias.begin());
      off += k->bias.size();
    }
    return p;
  };

  auto f = [&](const std::vector<double>& v) {
    ModelParams p = unpack(v);
    PairForward fwd = forward_pair(p, im_a, im_b, batch);
    return loss(batch, fwd.preds, 1.0).total;
  };

  PairForward fwd = forward_pair(params, im_a, im_b, batch);
  PredictionGrads pg = loss_backward(batch, fwd.preds, 1.0);
  ParamGrads grads(params);
  backward_pair(params, im_a, im_b, batch, fwd, pg, grads);
  std::vector<double> analytic;
  for (ConvKernel* k : grads.tensors()) {
    analytic.insert(analytic.end(), k->weights.begin(), k->weights.end());
    analytic.insert(analytic.end(), k->bias.begin(), k->bias.end());
  }
  return {"network_end_to_end", grad_check(f, pack(params), analytic)};
}

}  // namespace

GradCheckReport run_gradcheck() {
  GradCheckReport rep;
  rep.entries.push_back(check_correlate(true));
  rep.entries.push_back(check_correlate(false));
  rep.entries.push_back(check_psroi(PoolMode::kScore));
  rep.entries.push_back(check_psroi(PoolMode::kRegression));
  rep.entries.push_back(check_conv2d());
  rep.entries.push_back(check_relu());
  rep.entries.push_back(check_softmax_ce());
  rep.entries.push_back(check_smooth_l1());
  rep.entries.push_back(check_loss());
  rep.entries.push_back(check_network());
  for (const GradCheckEntry& e : rep.entries) rep.worst = std::max(rep.worst, e.max_rel_error);
  return rep;
}

void run_plotdata(const PlotArgs& args) {
  if (args.taus.empty()) throw std::invalid_argument("run_plotdata: need at least one stride");
  ModelParams params = load_model(args.model_dir);
  Dataset data = load_dataset(args.data_dir);
  fs::create_directories(args.out_dir);

  InferConfig base;
  LinkSettings link_cfg;

  InferenceOutputs first_out;
  std::string tau_csv = "tau,frame_map,video_map\n";
  for (std::size_t i = 0; i < args.taus.size(); ++i) {
    InferConfig cfg = base;
    cfg.temporal_stride = args.taus[i];
    InferenceOutputs out = infer_dataset(params, data, cfg);
    EvalResult frame_eval = eval_records(out.detections, data, args.iou_thresh, true);
    LinkOutputs linked = link_records(out.detections, out.tracklets, data.config.class_count,
                                      link_cfg);
    EvalResult video_eval = eval_records(linked.detections, data, args.iou_thresh, true);
    tau_csv += std::to_string(args.taus[i]) + "," + csv_num(frame_eval.mean_ap) + "," +
               csv_num(video_eval.mean_ap) + "\n";
    if (i == 0) {
      first_out = std::move(out);
      for (const auto& [cls, ce] : video_eval.per_class) {
        std::string csv = "recall,precision,score\n";
        for (const PrPoint& p : ce.curve)
          csv += csv_num(p.recall) + "," + csv_num(p.precision) + "," + csv_num(p.score) + "\n";
        write_text_file(args.out_dir / ("pr_class_" + std::to_string(cls) + ".csv"), csv);
      }
    }
  }
  write_text_file(args.out_dir / "map_vs_tau.csv", tau_csv);

  std::string alpha_csv = "alpha,video_map\n";
  for (double alpha : args.alphas) {
    LinkSettings cfg = link_cfg;
    cfg.alpha = alpha;
    LinkOutputs linked = link_records(first_out.detections, first_out.tracklets,
                                      data.config.class_count, cfg);
    EvalResult video_eval = eval_records(linked.detections, data, args.iou_thresh, true);
    alpha_csv += csv_num(alpha) + "," + csv_num(video_eval.mean_ap) + "\n";
  }
  write_text_file(args.out_dir / "map_vs_alpha.csv", alpha_csv);

  if (fs::exists(args.model_dir / "loss_curve.csv"))
    fs::copy_file(args.model_dir / "loss_curve.csv", args.out_dir / "loss_curve.csv",
                  fs::copy_options::overwrite_existing);

  json cfg{{"taus", args.taus}, {"alphas", args.alphas}, {"iou_threshold", args.iou_thresh}};
  write_run_manifest(args.out_dir, "plotdata", cfg, 0, {args.model_dir, args.data_dir});
}

}  // namespace detrack::pipeline
