// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace facedet {

/// Axis-aligned box in continuous pixel coordinates, corner form.
/// Width is x_max - x_min (no +1 pixel convention).
template <typename Scalar>
struct BBox {
  Scalar x_min{0};
  Scalar y_min{0};
  Scalar x_max{0};
  Scalar y_max{0};

  Scalar width() const { return x_max - x_min; }
  Scalar height() const { return y_max - y_min; }
  Scalar area() const { return width() * height(); }
  Scalar center_x() const { return (x_min + x_max) / Scalar(2); }
  Scalar center_y() const { return (y_min + y_max) / Scalar(2); }
  /// Geometric mean side length, used as the "face size".
  Scalar size() const { return std::sqrt(std::max(Scalar(0), area())); }

  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_max >= x_min && y_max >= y_min;
  }

  template <typename Other>
  BBox<Other> cast() const {
    return {Other(x_min), Other(y_min), Other(x_max), Other(y_max)};
  }

  static BBox from_xywh(Scalar x, Scalar y, Scalar w, Scalar h) { return {x, y, x + w, y + h}; }
  static BBox from_center(Scalar cx, Scalar cy, Scalar w, Scalar h) {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

using Box = BBox<double>;

template <typename Scalar>
Scalar intersection_area(const BBox<Scalar>& a, const BBox<Scalar>& b) {
  const Scalar w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const Scalar h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0 || h <= 0) return Scalar(0);
  return w * h;
}

/// Intersection over union. Zero-area pairs (including identical degenerate
/// boxes) yield 0.
template <typename Scalar>
Scalar iou(const BBox<Scalar>& a, const BBox<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  if (inter <= 0) return Scalar(0);
  const Scalar uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : Scalar(0);
}

template <typename Scalar>
BBox<Scalar> clip(const BBox<Scalar>& b, Scalar width, Scalar height) {
  return {std::clamp(b.x_min, Scalar(0), width), std::clamp(b.y_min, Scalar(0), height),
          std::clamp(b.x_max, Scalar(0), width), std::clamp(b.y_max, Scalar(0), height)};
}

template <typename Scalar>
BBox<Scalar> hflip(const BBox<Scalar>& b, Scalar image_width) {
  return {image_width - b.x_max, b.y_min, image_width - b.x_min, b.y_max};
}

template <typename Scalar>
struct Variances {
  Scalar center{Scalar(0.1)};
  Scalar size{Scalar(0.2)};
};

template <typename Scalar>
struct EncodedOffset {
  Scalar dx{0};
  Scalar dy{0};
  Scalar dw{0};
  Scalar dh{0};
};

/// Center / log-size parameterization of `gt` relative to `anchor`, divided
/// by the variances.
template <typename Scalar>
EncodedOffset<Scalar> encode(const BBox<Scalar>& gt, const BBox<Scalar>& anchor,
                             const Variances<Scalar>& var = {}) {
  const Scalar aw = anchor.width();
  const Scalar ah = anchor.height();
  if (!(aw > 0) || !(ah > 0)) throw std::invalid_argument("encode: anchor must have positive size");
  return {(gt.center_x() - anchor.center_x()) / (aw * var.center),
          (gt.center_y() - anchor.center_y()) / (ah * var.center),
          std::log(gt.width() / aw) / var.size, std::log(gt.height() / ah) / var.size};
}

template <typename Scalar>
BBox<Scalar> decode(const EncodedOffset<Scalar>& off, const BBox<Scalar>& anchor,
                    const Variances<Scalar>& var = {}) {
  const Scalar aw = anchor.width();
  const Scalar ah = anchor.height();
  const Scalar cx = anchor.center_x() + off.dx * var.center * aw;
  const Scalar cy = anchor.center_y() + off.dy * var.center * ah;
  const Scalar w = aw * std::exp(off.dw * var.size);
  const Scalar h = ah * std::exp(off.dh * var.size);
  return BBox<Scalar>::from_center(cx, cy, w, h);
}

template <typename Scalar>
BBox<Scalar> decode(const EncodedOffset<Scalar>& off, const BBox<Scalar>& anchor,
                    const Variances<Scalar>& var, Scalar clamp_width, Scalar clamp_height) {
  return clip(decode(off, anchor, var), clamp_width, clamp_height);
}

template <typename Scalar>
struct ScoredBox {
  BBox<Scalar> box;
  Scalar score{0};
};

using Detection = ScoredBox<double>;

/// Greedy non-maximum suppression. Candidates are visited in descending score
/// order (stable in input order for equal scores); a candidate is suppressed
/// when its IoU with any kept box exceeds `iou_threshold`.
template <typename Scalar>
std::vector<ScoredBox<Scalar>> nms(std::span<const ScoredBox<Scalar>> boxes, Scalar iou_threshold,
                                   std::size_t top_k) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });

  std::vector<ScoredBox<Scalar>> kept;
  for (std::size_t idx : order) {
    if (kept.size() >= top_k) break;
    const auto& cand = boxes[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const ScoredBox<Scalar>& k) {
      return iou(k.box, cand.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

template <typename Scalar>
std::vector<ScoredBox<Scalar>> nms(const std::vector<ScoredBox<Scalar>>& boxes, Scalar iou_threshold,
                                   std::size_t top_k) {
  return nms(std::span<const ScoredBox<Scalar>>(boxes), iou_threshold, top_k);
}

}  // namespace facedet
