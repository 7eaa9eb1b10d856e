// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace facedet {

/// Raised for invalid user input: bad config keys or values, malformed files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplerConfig {
  bool enabled = true;
  std::vector<double> anchor_sizes{16, 32, 64, 128, 256, 512};
  double bdas_probability = 0.8;
  int crop_size = 640;
  double size_interval_lo = 0.5;
  double size_interval_hi = 2.0;
  // When true, the target anchor index is drawn from {0..min(last, nearest+1)}.
  bool bdas_index_cap = true;
  int ssd_max_trials = 50;
  double color_distort_probability = 0.5;
  double hflip_probability = 0.5;
  double brightness_delta = 32.0;
  double contrast_lo = 0.5;
  double contrast_hi = 1.5;
  double saturation_lo = 0.5;
  double saturation_hi = 1.5;
  double hue_delta = 18.0;
};

struct AnchorConfig {
  std::vector<double> sizes{16, 32, 64, 128, 256, 512};
  std::vector<int> strides{4, 8, 16, 32, 64, 128};
  std::vector<double> context_ratios{1, 2, 4};
  double primary_iou = 0.35;
  double compensate_iou = 0.1;
  int compensate_top_n = 6;
  double ignore_iou = 0.35;
  double variance_center = 0.1;
  double variance_size = 0.2;
  // Supervise head/body branches on the first shot too.
  bool first_shot_context = true;
};

struct NetworkConfig {
  std::string backbone = "plain";
  std::vector<int> backbone_channels{64, 128, 256, 512, 512, 256};
  int lfpn_levels = 3;
  int lfpn_channels = 128;
  int dense_stages = 4;
  int dense_growth = 32;
  int dense_projection = 64;
  int anchor_free_level = 0;
  double anchor_free_shrink = 0.3;
  double anchor_free_distance_scale = 16.0;
  std::vector<double> input_mean{104, 117, 123};
  std::vector<double> input_std{58, 57, 57};
};

struct LossConfig {
  double first_shot_weight = 0.5;
  double regression_weight = 1.0;
  double segmentation_weight = 0.1;
  double anchor_free_weight = 0.1;
  std::vector<double> branch_weights{1.0, 0.5, 0.25};
  double mining_ratio = 3.0;
  double negative_filter_threshold = 0.99;
};

struct OptimConfig {
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int warmup_iters = 3000;
  double lr_start = 1e-6;
  double lr_peak = 4e-3;
  std::vector<int> decay_iters{80000, 100000};
  double decay_factor = 0.1;
  int total_iters = 120000;
  int batch_size = 28;
  // Multiplies every iteration count above (warmup, decay boundaries, total).
  double scale = 1.0;
  int checkpoint_every = 5000;
  int log_every = 1;

  int scaled(int iters) const;
};

struct EvalConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.3;
  int max_detections = 750;
  double match_iou = 0.5;
  int pr_thresholds = 1000;
};

struct IoConfig {
  std::string data_root = ".";
  std::string annotations = "annotations.txt";
  std::string subset_easy;
  std::string subset_medium;
  std::string subset_hard;
  std::string output_dir = "runs";
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  bool deterministic = false;
};

/// Root configuration record. Loaded from an INI file with [sections];
/// unknown keys are rejected.
struct DetectorConfig {
  SamplerConfig sampler;
  AnchorConfig anchors;
  NetworkConfig network;
  LossConfig losses;
  OptimConfig optim;
  EvalConfig eval;
  IoConfig io;
  RunConfig run;

  /// Full-scale defaults.
  static DetectorConfig full_scale() { return {}; }
  /// 160 px crops, strides 2..64, anchors 4..128, narrow network.
  static DetectorConfig desk_scale();

  static DetectorConfig load(const std::filesystem::path& path);
  static DetectorConfig parse(const std::string& text);
  std::string dump() const;

  /// Applies a dotted override such as "optim.total_iters=500".
  void set(const std::string& dotted_key, const std::string& value);
  void apply_overrides(const std::vector<std::string>& assignments);

  void validate() const;

  /// Stable 64-bit FNV-1a hash over the model-defining sections (anchors,
  /// network, crop size). Checkpoints record it.
  std::uint64_t model_hash() const;
  std::string model_hash_hex() const;

  int num_levels() const { return static_cast<int>(anchors.strides.size()); }
  int num_branches() const { return static_cast<int>(anchors.context_ratios.size()); }
  int crop_size() const { return sampler.crop_size; }

  friend bool operator==(const DetectorConfig& a, const DetectorConfig& b) {
    return a.dump() == b.dump();
  }
};

}  // namespace facedet
