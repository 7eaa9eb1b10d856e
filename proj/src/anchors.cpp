// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace facedet {
namespace {

AnchorGrid make_grid(int image_size, int level, Shot shot, int stride, double size) {
  AnchorGrid g;
  g.level = level;
  g.shot = shot;
  g.stride = stride;
  g.anchor_size = size;
  g.rows = g.cols = grid_extent(image_size, stride);
  g.boxes.reserve(static_cast<std::size_t>(g.rows) * g.cols);
  for (int i = 0; i < g.rows; ++i)
    for (int j = 0; j < g.cols; ++j)
      g.boxes.push_back(Box::from_center(stride * (j + 0.5), stride * (i + 0.5), size, size));
  return g;
}

// Inclusive cell range along one axis whose anchors can overlap [lo, hi].
std::pair<int, int> cell_window(double lo, double hi, int stride, double size, int extent) {
  const int first = static_cast<int>(std::floor((lo - size / 2) / stride - 0.5));
  const int last = static_cast<int>(std::ceil((hi + size / 2) / stride - 0.5));
  return {std::max(0, first), std::min(extent - 1, last)};
}

template <typename Visit>
void for_each_overlapping(std::span<const AnchorGrid> grids, const Box& region, Visit&& visit) {
  std::size_t offset = 0;
  for (const auto& g : grids) {
    const auto [c0, c1] = cell_window(region.x_min, region.x_max, g.stride, g.anchor_size, g.cols);
    const auto [r0, r1] = cell_window(region.y_min, region.y_max, g.stride, g.anchor_size, g.rows);
    for (int i = r0; i <= r1; ++i)
      for (int j = c0; j <= c1; ++j) {
        const std::size_t cell = static_cast<std::size_t>(i) * g.cols + j;
        const double v = iou(g.boxes[cell], region);
        if (v > 0) visit(offset + cell, v);
      }
    offset += g.boxes.size();
  }
}

bool inside_closed(const Box& b, double x, double y) {
  return x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max;
}

}  // namespace

int grid_extent(int image_size, int stride) { return (image_size + stride - 1) / stride; }

AnchorPyramid build_anchor_pyramid(int image_size, const DetectorConfig& cfg) {
  const auto& a = cfg.anchors;
  if (image_size <= 0 || image_size % a.strides.front() != 0)
    throw std::invalid_argument("build_anchor_pyramid: image size " + std::to_string(image_size) +
                                " is not a multiple of stride " + std::to_string(a.strides.front()));
  AnchorPyramid p;
  for (std::size_t l = 0; l < a.strides.size(); ++l) {
    p.second.push_back(make_grid(image_size, int(l), Shot::kSecond, a.strides[l], a.sizes[l]));
    p.first.push_back(make_grid(image_size, int(l), Shot::kFirst, a.strides[l], a.sizes[l] / 2));
  }
  return p;
}

Box context_region(const Box& face, double ratio) {
  return Box::from_center(face.center_x(), face.center_y(), face.width() * ratio, face.height() * ratio);
}

MatchResult match(std::span<const Box> faces, std::span<const AnchorGrid> grids, double ratio, const MatchConfig& mc,
                  std::span<const Box> ignore_faces) {
  std::size_t total = 0;
  for (const auto& g : grids) total += g.boxes.size();
  MatchResult r;
  r.labels.assign(total, kNegative);
  r.matched_face.assign(total, -1);
  r.best_iou.assign(total, 0.0);
  std::vector<int> best_face(total, -1);

  // Candidates for stage 2, per face.
  std::vector<std::vector<std::pair<std::size_t, double>>> candidates(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Box region = context_region(faces[f], ratio);
    for_each_overlapping(grids, region, [&](std::size_t idx, double v) {
      if (v > r.best_iou[idx]) {
        r.best_iou[idx] = v;
        best_face[idx] = static_cast<int>(f);
      }
      if (v >= mc.compensate_iou) candidates[f].emplace_back(idx, v);
    });
  }

  std::vector<int> positives(faces.size(), 0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    if (best_face[idx] >= 0 && r.best_iou[idx] >= mc.primary_iou) {
      r.labels[idx] = kPositive;
      r.matched_face[idx] = best_face[idx];
      ++positives[best_face[idx]];
    }
  }

  for (std::size_t f = 0; f < faces.size(); ++f) {
    if (positives[f] > 0) continue;
    auto& cand = candidates[f];
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      return a.second > b.second || (a.second == b.second && a.first < b.first);
    });
    int taken = 0;
    for (const auto& [idx, v] : cand) {
      if (taken >= mc.compensate_top_n) break;
      if (r.labels[idx] == kPositive) continue;
      r.labels[idx] = kPositive;
      r.matched_face[idx] = static_cast<int>(f);
      ++taken;
    }
  }

  for (const Box& ig : ignore_faces) {
    for_each_overlapping(grids, context_region(ig, ratio), [&](std::size_t idx, double v) {
      if (v > mc.ignore_iou && r.labels[idx] == kNegative) r.labels[idx] = kIgnore;
    });
  }
  return r;
}

int assign_level(double face_size, std::span<const double> anchor_sizes) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  const double lf = std::log(std::max(face_size, 1e-9));
  for (std::size_t i = 0; i < anchor_sizes.size(); ++i) {
    const double d = std::abs(std::log(anchor_sizes[i]) - lf);
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

TargetSet build_targets(const Sample& sample, const AnchorPyramid& pyramid, const DetectorConfig& cfg) {
  const int levels = pyramid.levels();
  const int branches = cfg.num_branches();
  const MatchConfig mc = MatchConfig::from(cfg.anchors);
  const Variances<double> var{cfg.anchors.variance_center, cfg.anchors.variance_size};

  std::vector<Box> faces;
  std::vector<Box> ignored;
  for (std::size_t i = 0; i < sample.boxes.size(); ++i) {
    if (sample.is_valid_face(i))
      faces.push_back(sample.boxes[i]);
    else if (sample.boxes[i].area() > 0)
      ignored.push_back(sample.boxes[i]);
  }

  TargetSet t;
  for (int s = 0; s < 2; ++s) {
    const Shot shot = static_cast<Shot>(s);
    const auto& grids = pyramid.shot(shot);
    auto& out = t.shots[s];
    out.resize(levels);
    for (int l = 0; l < levels; ++l) {
      out[l].labels.assign(branches, std::vector<std::int8_t>(grids[l].cells(), kNegative));
      out[l].offsets = OffsetMatrix::Zero(grids[l].cells(), 4);
    }
    for (int b = 0; b < branches; ++b) {
      if (shot == Shot::kFirst && b > 0 && !cfg.anchors.first_shot_context) {
        for (int l = 0; l < levels; ++l) std::fill(out[l].labels[b].begin(), out[l].labels[b].end(), kIgnore);
        continue;
      }
      const MatchResult m = match(faces, grids, cfg.anchors.context_ratios[b], mc, ignored);
      std::size_t offset = 0;
      for (int l = 0; l < levels; ++l) {
        const auto& g = grids[l];
        for (int c = 0; c < g.cells(); ++c) {
          out[l].labels[b][c] = m.labels[offset + c];
          if (b == 0 && m.labels[offset + c] == kPositive) {
            const auto e = encode(faces[m.matched_face[offset + c]], g.boxes[c], var);
            out[l].offsets.row(c) << float(e.dx), float(e.dy), float(e.dw), float(e.dh);
          }
        }
        offset += g.boxes.size();
      }
    }
  }

  t.segmentation.resize(levels);
  for (int l = 0; l < levels; ++l) t.segmentation[l].assign(pyramid.second[l].cells(), 0.0f);
  for (const Box& f : faces) {
    const int l = assign_level(f.size(), cfg.anchors.sizes);
    const auto& g = pyramid.second[l];
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j)
        if (inside_closed(f, g.stride * (j + 0.5), g.stride * (i + 0.5))) t.segmentation[l][i * g.cols + j] = 1.0f;
  }

  auto& af = t.anchor_free;
  const auto& ag = pyramid.second[cfg.network.anchor_free_level];
  af.level = ag.level;
  af.stride = ag.stride;
  af.rows = ag.rows;
  af.cols = ag.cols;
  af.objectness.assign(ag.cells(), 0.0f);
  af.positive.assign(ag.cells(), 0);
  af.distances = OffsetMatrix::Zero(ag.cells(), 4);
  // Larger faces first so smaller ones win shared cells.
  std::vector<Box> by_area = faces;
  std::stable_sort(by_area.begin(), by_area.end(), [](const Box& a, const Box& b) { return a.area() > b.area(); });
  const double shrink = cfg.network.anchor_free_shrink;
  for (const Box& f : by_area) {
    const Box core = Box::from_center(f.center_x(), f.center_y(), f.width() * shrink, f.height() * shrink);
    const int ci = std::clamp(static_cast<int>(f.center_y() / af.stride), 0, af.rows - 1);
    const int cj = std::clamp(static_cast<int>(f.center_x() / af.stride), 0, af.cols - 1);
    for (int i = 0; i < af.rows; ++i)
      for (int j = 0; j < af.cols; ++j) {
        const double px = af.stride * (j + 0.5);
        const double py = af.stride * (i + 0.5);
        if (!inside_closed(core, px, py) && !(i == ci && j == cj)) continue;
        const double l = px - f.x_min, tp = py - f.y_min, r = f.x_max - px, bt = f.y_max - py;
        if (l <= 0 || tp <= 0 || r <= 0 || bt <= 0) continue;
        const int c = i * af.cols + j;
        af.objectness[c] = 1.0f;
        af.positive[c] = 1;
        af.distances.row(c) << float(l), float(tp), float(r), float(bt);
      }
  }
  return t;
}

std::vector<std::uint8_t> negative_filter_mask(std::span<const float> background_probs,
                                               std::span<const std::int8_t> labels, double threshold) {
  if (background_probs.size() != labels.size())
    throw std::invalid_argument("negative_filter_mask: size mismatch");
  std::vector<std::uint8_t> keep(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == kNegative && background_probs[i] > threshold) keep[i] = 0;
  return keep;
}

}  // namespace facedet
