// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>

#include "facedet/checkpoint.hpp"
#include "facedet/dataio.hpp"
#include "facedet/evaluation.hpp"
#include "facedet/network.hpp"
#include "facedet/sampling.hpp"
#include "facedet/training.hpp"

namespace facedet {
namespace {

class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json detections_json(const std::vector<Detection>& dets) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& d : dets)
    list.push_back({{"x", d.box.x_min}, {"y", d.box.y_min}, {"w", d.box.width()}, {"h", d.box.height()},
                    {"score", d.score}});
  return list;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write '" + path.string() + "'");
  out << text;
}

std::optional<SubsetList> subset_from(const DetectorConfig& cfg, const std::string& p) {
  if (p.empty()) return std::nullopt;
  const auto path = data_path(cfg, p);
  if (!std::filesystem::exists(path)) throw UserError("subset list '" + path.string() + "' does not exist");
  return parse_subset_list(path);
}

}  // namespace

DetectorConfig load_config(const std::optional<std::filesystem::path>& path,
                           const std::vector<std::string>& overrides) {
  DetectorConfig cfg = path ? DetectorConfig::load(*path) : DetectorConfig::full_scale();
  cfg.apply_overrides(overrides);
  if (const char* root = std::getenv(kDataRootEnv); root && *root) cfg.io.data_root = root;
  cfg.validate();
  return cfg;
}

std::filesystem::path data_path(const DetectorConfig& cfg, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : std::filesystem::path(cfg.io.data_root) / path;
}

int cmd_train(const TrainArgs& args, CommandStreams io) {
  DetectorConfig cfg = load_config(args.config, args.overrides);
  if (args.deterministic) cfg.run.deterministic = true;
  const auto annotations = data_path(cfg, cfg.io.annotations);
  if (!std::filesystem::exists(annotations)) throw UserError("annotation file '" + annotations.string() + "' does not exist");
  const Dataset data = load_dataset(cfg.io.data_root, annotations);
  if (data.records.empty()) throw UserError("annotation file '" + annotations.string() + "' has no images");

  TrainOptions opt;
  opt.output_dir = args.output_dir ? *args.output_dir : std::filesystem::path(cfg.io.output_dir);
  opt.resume = args.resume;
  const int every = std::max(1, cfg.optim.log_every);
  opt.on_iteration = [&](const IterationLog& l) {
    if (l.iteration % every == 0)
      io.err << "iter " << l.iteration << " lr " << l.lr << " loss " << l.report.total << '\n';
  };
  const TrainResult r = train(data, cfg, opt);
  nlohmann::json summary = {{"start_iteration", r.start_iteration},
                            {"end_iteration", r.end_iteration},
                            {"checkpoint", r.final_checkpoint.string()},
                            {"log", (opt.output_dir / "train_log.jsonl").string()}};
  if (!r.log.empty()) {
    summary["initial_loss"] = r.log.front().report.total;
    summary["final_loss"] = r.log.back().report.total;
  }
  io.out << summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& args, CommandStreams io) {
  const DetectorConfig cfg = load_config(args.config, args.overrides);
  if (!std::filesystem::exists(args.checkpoint))
    throw UserError("checkpoint '" + args.checkpoint.string() + "' does not exist");
  Detector detector(cfg);
  detector.load(args.checkpoint);

  const auto annotations = args.annotations ? *args.annotations : data_path(cfg, cfg.io.annotations);
  if (!std::filesystem::exists(annotations)) throw UserError("annotation file '" + annotations.string() + "' does not exist");
  const Dataset data = load_dataset(cfg.io.data_root, annotations);

  DetectionFile dets;
  for (std::size_t i = 0; i < data.records.size(); ++i)
    dets[data.records[i].image_path] = detector.detect(data.images[i]);
  const auto det_path = args.detections_out ? *args.detections_out
                                            : std::filesystem::path(cfg.io.output_dir) / "detections.txt";
  write_detection_file(det_path, dets);

  SubsetLists subsets{subset_from(cfg, cfg.io.subset_easy), subset_from(cfg, cfg.io.subset_medium),
                      subset_from(cfg, cfg.io.subset_hard)};
  const SubsetResults results = evaluate_subsets(dets, data.records, subsets, cfg.eval.match_iou, cfg.eval.pr_thresholds);
  for (const auto& w : results.warnings) io.err << "warning: " << w << '\n';
  const nlohmann::json metrics = metrics_json(results);
  if (args.metrics_out) write_text(*args.metrics_out, metrics.dump(2) + "\n");

  if (args.plot) {
    const auto curves = curves_from_metrics(metrics);
    if (curves.empty()) throw UserError("no subset has ground truth; nothing to plot");
    emit_pr_plot(curves, *args.plot);
  }
  nlohmann::json summary = {{"easy", metrics["easy"]}, {"medium", metrics["medium"]}, {"hard", metrics["hard"]},
                            {"detections", det_path.string()}};
  io.out << summary.dump(2) << '\n';
  return kExitOk;
}

int cmd_detect(const DetectArgs& args, CommandStreams io) {
  const DetectorConfig cfg = load_config(args.config, args.overrides);
  Detector detector(cfg);
  if (args.checkpoint) {
    if (!std::filesystem::exists(*args.checkpoint))
      throw UserError("checkpoint '" + args.checkpoint->string() + "' does not exist");
    detector.load(*args.checkpoint);
  } else {
    io.err << "warning: no checkpoint given, using untrained weights\n";
    detector.initialize(cfg.run.seed);
  }
  const cv::Mat image = load_image(args.image);
  const auto dets = detector.detect(image, args.min_score.value_or(cfg.eval.score_threshold));
  const nlohmann::json j = {{"image", args.image.string()}, {"width", image.cols}, {"height", image.rows},
                            {"detections", detections_json(dets)}};
  if (args.output) write_text(*args.output, j.dump(2) + "\n");
  io.out << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_sample_stats(const SampleStatsArgs& args, CommandStreams io) {
  if (args.draws < 0) throw UserError("--draws must be >= 0");
  const DetectorConfig cfg = load_config(args.config, args.overrides);
  std::vector<CorpusImage> corpus;
  if (args.use_dataset) {
    const auto annotations = data_path(cfg, cfg.io.annotations);
    if (!std::filesystem::exists(annotations)) throw UserError("annotation file '" + annotations.string() + "' does not exist");
    for (const auto& rec : parse_wider_annotations(annotations)) {
      const cv::Mat img = load_image(image_path(cfg.io.data_root, rec));
      CorpusImage c{img.cols, img.rows, {}};
      for (const auto& f : rec.faces)
        if (!f.attributes.invalid && f.w > 0 && f.h > 0) c.faces.push_back(f.box());
      corpus.push_back(std::move(c));
    }
  } else {
    corpus = default_synthetic_corpus(cfg.run.seed);
  }
  const SamplerStats stats = sampler_statistics(corpus, cfg.sampler, args.draws, cfg.run.seed);
  const std::string json = format_stats_json(stats) + "\n";
  if (args.output) write_text(*args.output, json);
  io.out << (args.text ? format_stats_text(stats) : json);
  return kExitOk;
}

int cmd_plot_pr(const PlotArgs& args, CommandStreams io) {
  std::ifstream in(args.metrics);
  if (!in) throw UserError("cannot read metrics file '" + args.metrics.string() + "'");
  nlohmann::json metrics;
  try {
    metrics = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UserError("metrics file '" + args.metrics.string() + "' is not valid JSON: " + e.what());
  }
  const auto curves = curves_from_metrics(metrics);
  if (curves.empty()) throw UserError("metrics file has no curves");
  emit_pr_plot(curves, args.output);
  io.out << args.output.string() << '\n';
  return kExitOk;
}

int cmd_synth(const SynthArgs& args, CommandStreams io) {
  if (args.images < 1) throw UserError("--images must be >= 1");
  if (args.min_size <= 0 || args.max_size < args.min_size) throw UserError("face size range is empty");
  SyntheticSpec spec;
  spec.n_images = args.images;
  spec.image_width = args.width;
  spec.image_height = args.height;
  spec.min_faces = args.min_faces;
  spec.max_faces = args.max_faces;
  spec.min_size = args.min_size;
  spec.max_size = args.max_size;
  spec.seed = args.seed;
  const SyntheticDataset ds = generate_synthetic_dataset(args.output, spec);
  std::size_t faces = 0;
  for (const auto& r : ds.records) faces += r.faces.size();
  io.out << nlohmann::json{{"root", ds.root.string()}, {"images", ds.records.size()}, {"faces", faces},
                           {"annotations", ds.annotations.string()}}
                .dump(2)
         << '\n';
  return kExitOk;
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const UserError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const TrainingError& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternalError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternalError;
  }
}

}  // namespace facedet
