// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/network.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "facedet/checkpoint.hpp"

namespace facedet {

Tensor<float> image_to_tensor(const cv::Mat& bgr, const NetworkConfig& cfg) {
  cv::Mat img;
  if (bgr.channels() == 1)
    cv::cvtColor(bgr, img, cv::COLOR_GRAY2BGR);
  else if (bgr.channels() == 4)
    cv::cvtColor(bgr, img, cv::COLOR_BGRA2BGR);
  else
    img = bgr;
  if (img.depth() != CV_8U) throw std::invalid_argument("image_to_tensor: expected an 8-bit image");
  Tensor<float> t(3, img.rows, img.cols);
  for (int i = 0; i < img.rows; ++i) {
    const auto* row = img.ptr<cv::Vec3b>(i);
    for (int j = 0; j < img.cols; ++j)
      for (int c = 0; c < 3; ++c)
        t.at(c, i, j) = float((row[j][c] - cfg.input_mean[c]) / cfg.input_std[c]);
  }
  return t;
}

Detector::Detector(const DetectorConfig& cfg)
    : cfg_(cfg), net_(cfg), pyramid_(build_anchor_pyramid(cfg.crop_size(), cfg)) {}

void Detector::initialize(std::uint64_t seed) {
  net_.init(seed);
  ready_ = true;
}

void Detector::load(const std::filesystem::path& checkpoint) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  require_hash(ckpt, cfg_.model_hash_hex());
  import_parameters(ckpt, net_.parameters());
  ready_ = true;
}

std::vector<Detection> Detector::detect(const cv::Mat& bgr, InferenceTrace* trace) {
  return detect(bgr, cfg_.eval.score_threshold, trace);
}

std::vector<Detection> Detector::detect(const cv::Mat& bgr, double score_threshold, InferenceTrace* trace) {
  if (!ready_) throw std::logic_error("detect: parameters are not initialized or loaded");
  if (bgr.empty()) throw std::invalid_argument("detect: empty image");
  const int crop = cfg_.crop_size();
  cv::Mat input = bgr;
  if (bgr.cols != crop || bgr.rows != crop) cv::resize(bgr, input, cv::Size(crop, crop), 0, 0, cv::INTER_LINEAR);
  const double sx = double(bgr.cols) / crop;
  const double sy = double(bgr.rows) / crop;

  const HeadOutputs<float> out = net_.forward(image_to_tensor(input, cfg_.network), ForwardMode::kInference, trace);
  const Variances<double> var{cfg_.anchors.variance_center, cfg_.anchors.variance_size};

  std::vector<Detection> candidates;
  for (int l = 0; l < pyramid_.levels(); ++l) {
    const auto& grid = pyramid_.second[l];
    const auto& cls = out.shots[1].cls[l];
    const auto& reg = out.shots[1].reg[l];
    if (trace) {
      trace->consumed.push_back("second/cls/L" + std::to_string(l) + "/face");
      trace->consumed.push_back("second/reg/L" + std::to_string(l));
    }
    for (int c = 0; c < grid.cells(); ++c) {
      const double score = sigmoid(double(cls.data(1, c)) - double(cls.data(0, c)));
      if (score < score_threshold) continue;
      const EncodedOffset<double> off{reg.data(0, c), reg.data(1, c), reg.data(2, c), reg.data(3, c)};
      Box b = decode(off, grid.boxes[c], var);
      b = Box{b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy};
      b = clip(b, double(bgr.cols), double(bgr.rows));
      if (!(b.area() > 0)) continue;
      candidates.push_back({b, score});
    }
  }
  return nms(candidates, cfg_.eval.nms_iou, static_cast<std::size_t>(cfg_.eval.max_detections));
}

}  // namespace facedet
