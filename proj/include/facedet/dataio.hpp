// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "facedet/geometry.hpp"

namespace facedet {

/// Malformed annotation or detection text; carries the 1-based line number.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct FaceAttributes {
  int blur = 0;          // {0,1,2}
  int expression = 0;    // {0,1}
  int illumination = 0;  // {0,1}
  int invalid = 0;       // {0,1}
  int occlusion = 0;     // {0,1,2}
  int pose = 0;          // {0,1}

  friend bool operator==(const FaceAttributes&, const FaceAttributes&) = default;
};

struct AnnotatedFace {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  FaceAttributes attributes;

  Box box() const { return Box::from_xywh(x, y, w, h); }
  friend bool operator==(const AnnotatedFace&, const AnnotatedFace&) = default;
};

struct AnnotationRecord {
  std::string image_path;
  std::vector<AnnotatedFace> faces;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// Parses the wider_face_*_bbx_gt text format: a path line, a count line,
/// then `count` lines of ten integers. A zero count is followed by one
/// all-zero line that is consumed and dropped.
std::vector<AnnotationRecord> parse_wider_annotations(std::istream& in);
std::vector<AnnotationRecord> parse_wider_annotations(const std::filesystem::path& path);

void write_wider_annotations(std::ostream& out, const std::vector<AnnotationRecord>& records);
void write_wider_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

/// Subset membership: image path -> indices (0-based) of the faces that
/// belong to the subset. Other faces of the image are ignore regions.
using SubsetList = std::map<std::string, std::set<int>>;

/// Text format per image: path line, count line, one line of 1-based face
/// indices (empty when count is 0).
SubsetList parse_subset_list(std::istream& in);
SubsetList parse_subset_list(const std::filesystem::path& path);
void write_subset_list(std::ostream& out, const SubsetList& subset);

struct SyntheticSpec {
  int n_images = 8;
  int image_width = 160;
  int image_height = 160;
  int min_faces = 1;
  int max_faces = 3;
  // Face size sqrt(w*h) is log-uniform on [min_size, max_size].
  double min_size = 8.0;
  double max_size = 128.0;
  double invalid_fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Draws face geometry only; rendering is separate so statistics over large
/// corpora stay cheap.
std::vector<AnnotationRecord> generate_synthetic_annotations(const SyntheticSpec& spec);

/// High-contrast elliptical "faces" with eye/mouth marks on a textured
/// background; each face exactly fills its box.
cv::Mat render_synthetic_image(const AnnotationRecord& record, int width, int height, std::uint64_t seed);

struct SyntheticDataset {
  std::filesystem::path root;
  std::filesystem::path annotations;
  std::filesystem::path subset_easy;
  std::filesystem::path subset_medium;
  std::filesystem::path subset_hard;
  std::vector<AnnotationRecord> records;
};

/// Writes images/*.png, annotations.txt and easy/medium/hard subset lists
/// (easy: faces >= 32 px, medium: >= 16 px, hard: all valid faces).
SyntheticDataset generate_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

/// Loads an 8-bit BGR image. Throws std::runtime_error when unreadable.
cv::Mat load_image(const std::filesystem::path& path);

/// Annotated images with their pixels, as consumed by training.
struct Dataset {
  std::vector<AnnotationRecord> records;
  std::vector<cv::Mat> images;
};

/// Loads `annotations` and every referenced image under `root/images`.
Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& annotations);

std::filesystem::path image_path(const std::filesystem::path& root, const AnnotationRecord& record);

}  // namespace facedet
