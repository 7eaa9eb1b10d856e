// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facedet/checkpoint.hpp"
#include "facedet/config.hpp"
#include "facedet/dataio.hpp"
#include "facedet/losses.hpp"
#include "facedet/network.hpp"

namespace facedet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear warmup lr_start -> lr_peak over [0, warmup], then lr_peak times
/// decay_factor^k after the k-th decay boundary. Iteration counts are the
/// config values multiplied by `scale`. Throws std::out_of_range outside
/// [0, total].
double lr_at(int iteration, const OptimConfig& cfg);

/// SGD with momentum and L2 weight decay:
///   v <- mu v + (g + wd p);  p <- p - lr v
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const ParamList<float>& params, double lr);
  void save(Checkpoint& ckpt, const ParamList<float>& params) const;
  void load(const Checkpoint& ckpt, const ParamList<float>& params);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Mat<float>> velocity_;
};

struct IterationLog {
  int iteration = 0;
  double lr = 0;
  LossReport report;

  nlohmann::json to_json() const;
  static IterationLog from_json(const nlohmann::json& j);
};

struct TrainOptions {
  std::filesystem::path output_dir = "runs";
  /// Continue from output_dir/latest.ckpt when it exists.
  bool resume = false;
  /// Stop after this iteration count instead of the scheduled total.
  std::optional<int> stop_at;
  bool write_log = true;
  bool write_checkpoints = true;
  std::function<void(const IterationLog&)> on_iteration;
};

struct TrainResult {
  std::vector<IterationLog> log;  // iterations run by this call
  int start_iteration = 0;
  int end_iteration = 0;
  std::filesystem::path final_checkpoint;
};

/// Builds the checkpoint of a detector mid-training.
Checkpoint make_checkpoint(Detector& detector, const SgdMomentum& optimizer, int iteration,
                           const std::vector<std::size_t>& order, std::size_t cursor, int epoch);

/// Runs the sample -> targets -> forward -> loss -> SGD pipeline. The
/// augmentation stream of every sample is seeded from (seed, sample
/// counter), so runs replay exactly whatever the worker count. Each image
/// epoch uses a fresh shuffle. A non-finite loss dumps the offending batch
/// under output_dir/nan_dump and throws TrainingError.
TrainResult train(const Dataset& data, const DetectorConfig& cfg, const TrainOptions& options);

/// Reads a JSON-lines training log.
std::vector<IterationLog> read_train_log(const std::filesystem::path& path);

}  // namespace facedet
