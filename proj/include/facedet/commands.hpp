// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "facedet/config.hpp"

namespace facedet {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUserError = 1, kExitInternalError = 2 };

/// Environment variable that replaces io.data_root.
inline constexpr const char* kDataRootEnv = "FACEDET_DATA_ROOT";

struct CommandStreams {
  std::ostream& out;
  std::ostream& err;
};

struct TrainArgs {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  bool resume = false;
  bool deterministic = false;
  std::optional<std::filesystem::path> output_dir;
};

struct EvaluateArgs {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> annotations;
  std::optional<std::filesystem::path> plot;
  std::optional<std::filesystem::path> metrics_out;
  std::optional<std::filesystem::path> detections_out;
};

struct DetectArgs {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  /// Without a checkpoint the detector runs on weights initialized from run.seed.
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path image;
  std::optional<double> min_score;
  std::optional<std::filesystem::path> output;
};

struct SampleStatsArgs {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  long long draws = 100000;
  bool use_dataset = false;
  bool text = false;
  std::optional<std::filesystem::path> output;
};

struct SynthArgs {
  std::filesystem::path output;
  int images = 8;
  int width = 160;
  int height = 160;
  int min_faces = 1;
  int max_faces = 3;
  double min_size = 16;
  double max_size = 96;
  std::uint64_t seed = 0;
};

struct PlotArgs {
  std::filesystem::path metrics;
  std::filesystem::path output;
};

/// Loads `path` (or full-scale defaults when empty), applies overrides and
/// the data-root environment variable.
DetectorConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

/// Resolves `p` against the data root unless it is absolute.
std::filesystem::path data_path(const DetectorConfig& cfg, const std::string& p);

int cmd_train(const TrainArgs& args, CommandStreams io);
int cmd_evaluate(const EvaluateArgs& args, CommandStreams io);
int cmd_detect(const DetectArgs& args, CommandStreams io);
int cmd_sample_stats(const SampleStatsArgs& args, CommandStreams io);
int cmd_plot_pr(const PlotArgs& args, CommandStreams io);
/// Writes a synthetic dataset (images, annotations, subset lists).
int cmd_synth(const SynthArgs& args, CommandStreams io);

/// Runs `body`, mapping user-facing failures (bad config, malformed or
/// missing files, checkpoint mismatch) to kExitUserError and anything else
/// to kExitInternalError, with the message on `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace facedet
