// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facedet/dataio.hpp"
#include "facedet/geometry.hpp"

namespace facedet {

enum class MatchOutcome : std::int8_t { kFalsePositive = 0, kTruePositive = 1, kIgnored = 2 };

/// Greedy matching of score-sorted detections. Each detection looks at the
/// not-yet-matched regular ground truths together with every ignore-flagged
/// one and takes the highest IoU (lowest index on ties). At IoU >= threshold
/// it becomes kIgnored for an ignore-flagged box, otherwise kTruePositive
/// and the box is consumed; below threshold it is kFalsePositive.
std::vector<MatchOutcome> match_detections(std::span<const Detection> dets, std::span<const Box> gts,
                                           std::span<const std::uint8_t> ignore, double iou_threshold = 0.5);

struct ScoredOutcome {
  double score = 0;
  MatchOutcome outcome = MatchOutcome::kFalsePositive;
};

struct PRCurve {
  std::vector<double> thresholds;  // descending score cut-offs
  std::vector<double> precision;
  std::vector<double> recall;
  double ap = 0;
  long long num_gt = 0;
};

/// Pools outcomes, sorts them by score and samples `bins` cut points at
/// ranks ceil(i * N / bins), i = 1..bins, each extended over tied scores.
/// Ignored detections count neither way. Returns nullopt when num_gt == 0.
std::optional<PRCurve> pr_curve(std::vector<ScoredOutcome> outcomes, long long num_gt, int bins = 1000);

/// Area under the precision envelope: sum over recall increments of the
/// best precision reachable at that recall or beyond.
double average_precision(std::span<const double> precision, std::span<const double> recall);

/// Image path -> detections.
using DetectionFile = std::map<std::string, std::vector<Detection>>;

/// WIDER submission format: per image a name line, a count line, then
/// "x y w h score" lines.
void write_detection_file(std::ostream& out, const DetectionFile& dets);
void write_detection_file(const std::filesystem::path& path, const DetectionFile& dets);
DetectionFile read_detection_file(std::istream& in);
DetectionFile read_detection_file(const std::filesystem::path& path);

struct SubsetLists {
  std::optional<SubsetList> easy;
  std::optional<SubsetList> medium;
  std::optional<SubsetList> hard;
};

struct SubsetResults {
  std::optional<PRCurve> easy;
  std::optional<PRCurve> medium;
  std::optional<PRCurve> hard;
  std::vector<std::string> warnings;
};

/// Per-subset AP over every annotated image. Faces outside the subset and
/// invalid-flagged faces are ignore regions. Images without detections
/// count as empty and add a warning. A missing or face-free subset yields
/// no curve.
SubsetResults evaluate_subsets(const DetectionFile& dets, const std::vector<AnnotationRecord>& records,
                               const SubsetLists& subsets, double iou_threshold = 0.5, int bins = 1000);

/// {"easy": ap|null, "medium": ..., "hard": ..., "curves": {...}, "warnings": [...]}
nlohmann::json metrics_json(const SubsetResults& results);

/// SVG figure, one panel per available subset, legend carrying the AP with
/// three decimals. Throws std::runtime_error when the file cannot be written.
void emit_pr_plot(const std::vector<std::pair<std::string, PRCurve>>& curves, const std::filesystem::path& path);

/// Curves from a metrics JSON document written by metrics_json.
std::vector<std::pair<std::string, PRCurve>> curves_from_metrics(const nlohmann::json& metrics);

}  // namespace facedet
