// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "facedet/config.hpp"
#include "facedet/geometry.hpp"
#include "facedet/sampling.hpp"

namespace facedet {

enum class Shot : int { kFirst = 0, kSecond = 1 };

/// Square anchors of one pyramid level of one shot, one per cell, row-major,
/// centered at (stride*(j+0.5), stride*(i+0.5)).
struct AnchorGrid {
  int level = 0;
  Shot shot = Shot::kSecond;
  int stride = 1;
  double anchor_size = 0;
  int rows = 0;
  int cols = 0;
  std::vector<Box> boxes;

  int cells() const { return rows * cols; }
};

/// Cells per side: ceil(image_size / stride), which is what a chain of
/// stride-2, pad-1, 3x3 convolutions produces.
int grid_extent(int image_size, int stride);

struct AnchorPyramid {
  std::vector<AnchorGrid> first;   // half-size anchors
  std::vector<AnchorGrid> second;  // anchor sizes from config

  const std::vector<AnchorGrid>& shot(Shot s) const { return s == Shot::kFirst ? first : second; }
  int levels() const { return static_cast<int>(second.size()); }
};

/// Rejects image sizes that are not a multiple of the base stride.
AnchorPyramid build_anchor_pyramid(int image_size, const DetectorConfig& cfg);

/// Same center, sides multiplied by `ratio` (>= 1).
Box context_region(const Box& face, double ratio);

enum Label : std::int8_t { kIgnore = -1, kNegative = 0, kPositive = 1 };

struct MatchConfig {
  double primary_iou = 0.35;
  double compensate_iou = 0.1;
  int compensate_top_n = 6;
  double ignore_iou = 0.35;

  static MatchConfig from(const AnchorConfig& a) {
    return {a.primary_iou, a.compensate_iou, a.compensate_top_n, a.ignore_iou};
  }
};

/// Assignment over the concatenation of the given grids' anchors.
struct MatchResult {
  std::vector<std::int8_t> labels;
  std::vector<int> matched_face;  // -1 unless positive
  std::vector<double> best_iou;   // against the context regions of `faces`
};

/// Two-stage matching against context_region(face, ratio):
///  1. an anchor whose best IoU reaches primary_iou is positive for its
///     argmax face (lowest face index on ties);
///  2. each face left without positives takes its top compensate_top_n
///     still-negative anchors with IoU >= compensate_iou (lower anchor index
///     on ties), faces visited in index order.
/// Remaining anchors overlapping the context region of an ignore face by
/// more than ignore_iou become kIgnore.
MatchResult match(std::span<const Box> faces, std::span<const AnchorGrid> grids, double ratio, const MatchConfig& mc,
                  std::span<const Box> ignore_faces = {});

using OffsetMatrix = Eigen::Matrix<float, Eigen::Dynamic, 4, Eigen::RowMajor>;

struct LevelTargets {
  std::vector<std::vector<std::int8_t>> labels;  // [branch][cell]
  OffsetMatrix offsets;                          // face branch regression targets, per cell
};

struct AnchorFreeTargets {
  int level = 0;
  int stride = 1;
  int rows = 0;
  int cols = 0;
  std::vector<float> objectness;  // per cell, {0,1}
  OffsetMatrix distances;         // left, top, right, bottom in pixels
  std::vector<std::uint8_t> positive;
};

struct TargetSet {
  std::array<std::vector<LevelTargets>, 2> shots;  // [shot][level]
  std::vector<std::vector<float>> segmentation;    // [level][cell]
  AnchorFreeTargets anchor_free;

  const std::vector<LevelTargets>& shot(Shot s) const { return shots[static_cast<int>(s)]; }
};

/// Level whose second-shot anchor size is nearest to `face_size` in log space.
int assign_level(double face_size, std::span<const double> anchor_sizes);

TargetSet build_targets(const Sample& sample, const AnchorPyramid& pyramid, const DetectorConfig& cfg);

/// true = keep. Excludes exactly the negatives whose first-shot background
/// probability is strictly greater than `threshold`.
std::vector<std::uint8_t> negative_filter_mask(std::span<const float> background_probs,
                                               std::span<const std::int8_t> labels, double threshold);

}  // namespace facedet
