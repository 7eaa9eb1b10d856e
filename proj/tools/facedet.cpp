// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "facedet/commands.hpp"

namespace {

template <typename T>
std::optional<T> opt(const CLI::Option* o, const T& v) {
  return o->count() ? std::optional<T>(v) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  using facedet::CommandStreams;
  CLI::App app{"Single-stage face detector: training, evaluation and inference"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Train a detector");
  facedet::TrainArgs targs;
  std::string train_out;
  train->add_option("-c,--config", targs.config, "Config file")->required();
  train->add_option("-s,--set", targs.overrides, "Override, e.g. optim.total_iters=500");
  train->add_flag("--resume", targs.resume, "Continue from <output>/latest.ckpt");
  train->add_flag("--deterministic", targs.deterministic, "Serial bit-replay mode");
  auto* train_out_opt = train->add_option("-o,--output", train_out, "Output directory (default io.output_dir)");

  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on an annotated set");
  facedet::EvaluateArgs eargs;
  std::string eann, eplot, emetrics, edets;
  eval->add_option("-c,--config", eargs.config, "Config file")->required();
  eval->add_option("-s,--set", eargs.overrides, "Config override");
  eval->add_option("-k,--checkpoint", eargs.checkpoint, "Checkpoint file")->required();
  auto* eann_opt = eval->add_option("-a,--annotations", eann, "Annotation file (default io.annotations)");
  auto* eplot_opt = eval->add_option("--plot", eplot, "Write the PR figure (SVG) here");
  auto* emetrics_opt = eval->add_option("-m,--metrics", emetrics, "Write metrics JSON here");
  auto* edets_opt = eval->add_option("--detections", edets, "Write the detection file here");

  auto* detect = app.add_subcommand("detect", "Detect faces in one image");
  facedet::DetectArgs dargs;
  std::string dckpt, dout;
  double dmin = 0;
  detect->add_option("-c,--config", dargs.config, "Config file")->required();
  detect->add_option("-s,--set", dargs.overrides, "Config override");
  auto* dckpt_opt = detect->add_option("-k,--checkpoint", dckpt, "Checkpoint file");
  detect->add_option("image", dargs.image, "Image path")->required();
  auto* dmin_opt = detect->add_option("--min-score", dmin, "Score threshold (default eval.score_threshold)");
  auto* dout_opt = detect->add_option("-o,--output", dout, "Also write the JSON here");

  auto* stats = app.add_subcommand("sample-stats", "Resized face size histograms per sampling strategy");
  facedet::SampleStatsArgs sargs;
  std::string sconfig, sout;
  auto* sconfig_opt = stats->add_option("-c,--config", sconfig, "Config file (default full-scale values)");
  stats->add_option("-s,--set", sargs.overrides, "Config override");
  stats->add_option("-n,--draws", sargs.draws, "Number of draws")->check(CLI::NonNegativeNumber);
  stats->add_flag("--dataset", sargs.use_dataset, "Use the configured dataset instead of the synthetic corpus");
  stats->add_flag("--text", sargs.text, "Print the text histogram instead of JSON");
  auto* sout_opt = stats->add_option("-o,--output", sout, "Also write the JSON here");

  auto* plot = app.add_subcommand("plot-pr", "Render PR curves from a metrics file");
  facedet::PlotArgs pargs;
  plot->add_option("metrics", pargs.metrics, "Metrics JSON from evaluate")->required();
  plot->add_option("-o,--output", pargs.output, "SVG output path")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset in the annotation format");
  facedet::SynthArgs yargs;
  synth->add_option("-o,--output", yargs.output, "Dataset root")->required();
  synth->add_option("-n,--images", yargs.images, "Image count");
  synth->add_option("--width", yargs.width, "Image width");
  synth->add_option("--height", yargs.height, "Image height");
  synth->add_option("--min-faces", yargs.min_faces, "Faces per image, lower bound");
  synth->add_option("--max-faces", yargs.max_faces, "Faces per image, upper bound");
  synth->add_option("--min-size", yargs.min_size, "Smallest face side");
  synth->add_option("--max-size", yargs.max_size, "Largest face side");
  synth->add_option("--seed", yargs.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? facedet::kExitOk : facedet::kExitUserError;
  }

  CommandStreams io{std::cout, std::cerr};
  return facedet::guarded(
      [&]() -> int {
        if (*train) {
          if (train_out_opt->count()) targs.output_dir = train_out;
          return facedet::cmd_train(targs, io);
        }
        if (*eval) {
          eargs.annotations = opt<std::filesystem::path>(eann_opt, eann);
          eargs.plot = opt<std::filesystem::path>(eplot_opt, eplot);
          eargs.metrics_out = opt<std::filesystem::path>(emetrics_opt, emetrics);
          eargs.detections_out = opt<std::filesystem::path>(edets_opt, edets);
          return facedet::cmd_evaluate(eargs, io);
        }
        if (*detect) {
          dargs.checkpoint = opt<std::filesystem::path>(dckpt_opt, dckpt);
          dargs.min_score = opt(dmin_opt, dmin);
          dargs.output = opt<std::filesystem::path>(dout_opt, dout);
          return facedet::cmd_detect(dargs, io);
        }
        if (*stats) {
          sargs.config = opt<std::filesystem::path>(sconfig_opt, sconfig);
          sargs.output = opt<std::filesystem::path>(sout_opt, sout);
          return facedet::cmd_sample_stats(sargs, io);
        }
        if (*synth) return facedet::cmd_synth(yargs, io);
        return facedet::cmd_plot_pr(pargs, io);
      },
      std::cerr);
}
