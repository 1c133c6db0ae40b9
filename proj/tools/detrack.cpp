// Command-line front end for the detect-and-track pipeline. Every subcommand
// writes a run_manifest.json next to its outputs; failures print a one-line
// JSON object to stderr and exit nonzero.

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "detrack/pipeline.hpp"
#include "detrack/util.hpp"
#include "json.hpp"

using namespace detrack;
namespace pl = detrack::pipeline;

namespace {

struct GenCli {
  std::string out;
  int videos = 20;
  std::uint64_t seed = 1;
  GenConfig cfg;
};

struct TrainCli {
  pl::TrainArgs args;
};

struct InferCli {
  pl::InferArgs args;
};

struct LinkCli {
  pl::LinkArgs args;
};

struct EvalCli {
  pl::EvalArgs args;
};

struct PlotCli {
  pl::PlotArgs args;
};

struct GradCli {
  std::string out;
  double threshold = 1e-4;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detrack: synthetic-video object detection and tracking pipeline"};
  app.require_subcommand(1);

  GenCli gen;
  CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic dataset");
  c_gen->add_option("--out", gen.out, "output dataset directory")->required();
  c_gen->add_option("--videos", gen.videos, "number of videos");
  c_gen->add_option("--frames", gen.cfg.frames, "frames per video");
  c_gen->add_option("--image-size", gen.cfg.image_size, "square frame size in pixels");
  c_gen->add_option("--classes", gen.cfg.class_count, "number of shape classes (1..3)");
  c_gen->add_option("--objects", gen.cfg.objects_per_video, "objects per video");
  c_gen->add_option("--seed", gen.seed, "dataset seed");
  c_gen->add_option("--jitter", gen.cfg.jitter, "per-frame velocity jitter");
  c_gen->add_option("--noise", gen.cfg.noise, "background noise level");
  c_gen->add_option("--occluder-prob", gen.cfg.occluder_prob, "distractor probability");

  TrainCli tr;
  CLI::App* c_train = app.add_subcommand("train", "train the detector on a dataset");
  c_train->add_option("--data", tr.args.data_dir, "dataset directory")->required();
  c_train->add_option("--out", tr.args.out_dir, "model output directory")->required();
  c_train->add_option("--iterations", tr.args.train_cfg.iterations, "SGD steps");
  c_train->add_option("--lr", tr.args.train_cfg.learning_rate, "learning rate");
  c_train->add_option("--seed", tr.args.train_cfg.seed, "training seed");
  c_train->add_option("--proposals", tr.args.train_cfg.proposals_per_frame,
                      "proposals per frame during training");
  c_train->add_flag("--no-track-loss", [&tr](std::int64_t) { tr.args.train_cfg.use_track_loss = false; },
                    "drop the cross-frame regression term");
  c_train->add_option("--lambda", tr.args.train_cfg.lambda, "regression loss weight");
  c_train->add_option("--base-channels", tr.args.model.base_channels, "backbone width");
  c_train->add_option("--top-channels", tr.args.model.top_channels, "head input width");
  c_train->add_option("--k", tr.args.model.k, "pooling grid size");
  c_train->add_option("--max-displacement", tr.args.model.max_displacement,
                      "correlation search radius");

  InferCli in;
  CLI::App* c_infer = app.add_subcommand("infer", "run detection and tracking on a dataset");
  c_infer->add_option("--model", in.args.model_dir, "model directory")->required();
  c_infer->add_option("--data", in.args.data_dir, "dataset directory")->required();
  c_infer->add_option("--out", in.args.out_dir, "output directory")->required();
  c_infer->add_option("--tau", in.args.cfg.temporal_stride, "temporal stride between frames");
  c_infer->add_option("--proposals", in.args.cfg.proposals_per_frame, "proposals per frame");
  c_infer->add_option("--nms-iou", in.args.cfg.nms_iou, "detection suppression threshold");
  c_infer->add_option("--keep", in.args.cfg.nms_keep, "detections kept per class per frame");

  LinkCli li;
  CLI::App* c_link = app.add_subcommand("link", "link detections into tubes and rescore");
  c_link->add_option("--detections", li.args.detections_path, "detections.jsonl")->required();
  c_link->add_option("--tracklets", li.args.tracklets_path, "tracklets.jsonl")->required();
  c_link->add_option("--out", li.args.out_dir, "output directory")->required();
  c_link->add_option("--alpha", li.args.settings.alpha, "rescoring fraction");
  c_link->add_flag("--causal", li.args.settings.causal, "online rescoring variant");
  c_link->add_flag("--average-tracked", li.args.settings.average_tracked,
                   "average scores along tracklets before linking");
  c_link->add_option("--max-tubes", li.args.settings.extract.max_tubes, "tubes per class");
  c_link->add_option("--classes", li.args.class_count, "class count (default: from scores)");

  EvalCli ev;
  CLI::App* c_eval = app.add_subcommand("eval", "score detections against dataset ground truth");
  c_eval->add_option("--detections", ev.args.detections_path, "detections.jsonl")->required();
  c_eval->add_option("--data", ev.args.data_dir, "dataset directory")->required();
  c_eval->add_option("--out", ev.args.out_dir, "report output directory")->required();
  c_eval->add_option("--iou", ev.args.iou_thresh, "matching IoU threshold");
  c_eval->add_flag("--pr-curves", ev.args.write_pr_curves, "write per-class PR curves");
  c_eval->add_flag("--all-frames", [&ev](std::int64_t) { ev.args.processed_only = false; },
                   "score every annotated frame, not just frames with detections");

  PlotCli pd;
  CLI::App* c_plot = app.add_subcommand("plotdata", "sweep stride and rescoring settings");
  c_plot->add_option("--model", pd.args.model_dir, "model directory")->required();
  c_plot->add_option("--data", pd.args.data_dir, "dataset directory")->required();
  c_plot->add_option("--out", pd.args.out_dir, "output directory")->required();
  c_plot->add_option("--taus", pd.args.taus, "temporal strides to sweep");
  c_plot->add_option("--alphas", pd.args.alphas, "rescoring fractions to sweep");

  GradCli gc;
  CLI::App* c_grad = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
  c_grad->add_option("--out", gc.out, "optional directory for gradcheck.json");
  c_grad->add_option("--threshold", gc.threshold, "maximum relative error");

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (c_gen->parsed()) {
      pl::generate_dataset(gen.cfg, gen.videos, gen.seed, gen.out);
      std::printf("wrote %d videos to %s\n", gen.videos, gen.out.c_str());
    } else if (c_train->parsed()) {
      pl::TrainSummary s = pl::run_train(tr.args);
      std::printf("holdout loss %.4f -> %.4f\n", s.holdout_before.total, s.holdout_after.total);
    } else if (c_infer->parsed()) {
      pl::run_infer(in.args);
      std::printf("wrote detections and tracklets to %s\n",
                  in.args.out_dir.string().c_str());
    } else if (c_link->parsed()) {
      pl::run_link(li.args);
      std::printf("wrote linked detections and tubes to %s\n",
                  li.args.out_dir.string().c_str());
    } else if (c_eval->parsed()) {
      EvalResult res = pl::run_eval(ev.args);
      std::printf("mean_ap %.6f\n", res.mean_ap);
      for (const auto& [cls, ce] : res.per_class)
        std::printf("class %d ap %.6f (gt %d, det %d)\n", cls, ce.ap, ce.gt_count, ce.det_count);
    } else if (c_plot->parsed()) {
      pl::run_plotdata(pd.args);
      std::printf("wrote sweep tables to %s\n", pd.args.out_dir.string().c_str());
    } else if (c_grad->parsed()) {
      pl::GradCheckReport rep = pl::run_gradcheck();
      for (const pl::GradCheckEntry& e : rep.entries)
        std::printf("%-24s %.3e\n", e.name.c_str(), e.max_rel_error);
      std::printf("worst %.3e (threshold %.1e)\n", rep.worst, gc.threshold);
      if (!gc.out.empty()) {
        std::filesystem::create_directories(gc.out);
        nlohmann::json j{{"threshold", gc.threshold}, {"worst", rep.worst}};
        for (const pl::GradCheckEntry& e : rep.entries) j["checks"][e.name] = e.max_rel_error;
        detrack::write_text_file(std::filesystem::path(gc.out) / "gradcheck.json",
                                 j.dump(2) + "\n");
      }
      if (!rep.passed(gc.threshold)) {
        std::fprintf(stderr, "{\"error\":{\"command\":\"gradcheck\",\"message\":\"worst error above threshold\"}}\n");
        return 1;
      }
    }
  } catch (const std::exception& ex) {
    nlohmann::json err{{"error", {{"command", command}, {"message", ex.what()}}}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
