// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "facedet/config.hpp"
#include "facedet/dataio.hpp"
#include "facedet/geometry.hpp"

namespace facedet {

using Rng = std::mt19937_64;

/// Independent stream for sampler worker `worker_index`.
inline Rng worker_rng(std::uint64_t base_seed, int worker_index) {
  return Rng(base_seed + static_cast<std::uint64_t>(worker_index));
}

/// One training image with its faces. Invalid-flagged faces are carried but
/// never become positives.
struct Sample {
  cv::Mat image;  // 8-bit BGR
  std::vector<Box> boxes;
  std::vector<FaceAttributes> attributes;

  bool is_valid_face(std::size_t i) const { return !attributes[i].invalid && boxes[i].area() > 0; }
};

Sample make_sample(const cv::Mat& image, const AnnotationRecord& record);

enum class SamplingStrategy { kBalancedAnchor, kSsd };

SamplingStrategy select_strategy(const SamplerConfig& cfg, Rng& rng);

/// Index of the anchor size closest to `face_size` (ties go to the smaller).
int nearest_anchor_index(double face_size, std::span<const double> anchor_sizes);

struct TargetSizeDraw {
  int anchor_index = 0;
  double size = 0;
};

/// Balanced law: the target anchor index is uniform on
/// {0..min(last, nearest+1)} (or on all indices when the cap is disabled),
/// then the size is uniform on [lo*a, hi*a].
TargetSizeDraw bdas_target_size(double face_size, const SamplerConfig& cfg, Rng& rng);

/// Data-anchor-sampling baseline: same index law, but the size draw never
/// upscales the face beyond twice its size, so small faces stay small.
TargetSizeDraw das_target_size(double face_size, const SamplerConfig& cfg, Rng& rng);

/// Rescales so `selected` measures `target_size`, then takes a crop_size
/// square window drawn uniformly among windows containing the selected face
/// center (zero padding outside the image). Boxes whose center leaves the
/// window are dropped; the rest are clipped.
Sample scale_and_crop(const Sample& sample, std::size_t selected, double target_size, const SamplerConfig& cfg,
                      Rng& rng);

struct SsdCrop {
  Box region;            // in source pixel coordinates
  bool whole_image = true;
  double min_iou = 0;    // constraint that held; 0 for whole/unconstrained
  int option = 0;        // 0 whole, 1..5 min-IoU {0.1,...,0.9}, 6 unconstrained
};

/// SSD batch-sampler crop choice (geometry only).
SsdCrop choose_ssd_crop(int width, int height, std::span<const Box> boxes, const SamplerConfig& cfg, Rng& rng);

Sample apply_crop(const Sample& sample, const Box& region, int crop_size);

Sample ssd_sample(const Sample& sample, const SamplerConfig& cfg, Rng& rng, SsdCrop* chosen = nullptr);

/// Picks a random valid face, draws a balanced target size and crops. Falls
/// back to SSD sampling when no face is selectable.
Sample balanced_anchor_sample(const Sample& sample, const SamplerConfig& cfg, Rng& rng);

void color_distort(cv::Mat& image, const SamplerConfig& cfg, Rng& rng);
void horizontal_flip(Sample& sample);

/// Full training-time pipeline: strategy mixture, color distortion and
/// horizontal flip. With `cfg.enabled == false` the image is only resized
/// to crop_size.
Sample augment(const Sample& sample, const SamplerConfig& cfg, Rng& rng);

Sample resize_to_crop(const Sample& sample, int crop_size);

/// Statistics over resized face sizes.
struct SizeHistogram {
  std::vector<double> edges;  // bin i covers [edges[i], edges[i+1])
  std::vector<long long> counts;
  long long total = 0;
  long long in_32_128 = 0;

  double mass_32_128() const { return total ? static_cast<double>(in_32_128) / total : 0.0; }
  void add(double size);
};

struct CorpusImage {
  int width = 0;
  int height = 0;
  std::vector<Box> faces;  // valid faces only
};

struct SamplerStats {
  long long draws = 0;
  long long mixture_bdas_chosen = 0;
  SizeHistogram bdas;
  SizeHistogram das;
  SizeHistogram ssd;
  SizeHistogram mixture;
};

SizeHistogram make_size_histogram();

/// Stand-in corpus for statistics when no dataset is given: 500 images of
/// 1024x768 with 1..10 faces, sizes log-uniform in [6, 384].
std::vector<CorpusImage> default_synthetic_corpus(std::uint64_t seed = 0);

/// Draws `n_draws` (image, face) pairs from `corpus` and records the size the
/// selected face would have after each sampling strategy. Every strategy
/// uses its own stream seeded with `seed`.
SamplerStats sampler_statistics(std::span<const CorpusImage> corpus, const SamplerConfig& cfg, long long n_draws,
                                std::uint64_t seed);

std::string format_stats_json(const SamplerStats& stats);
std::string format_stats_text(const SamplerStats& stats);

}  // namespace facedet
