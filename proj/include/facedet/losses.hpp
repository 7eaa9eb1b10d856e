// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "facedet/anchors.hpp"
#include "facedet/config.hpp"
#include "facedet/heads.hpp"
#include "facedet/nn.hpp"

namespace facedet {

template <typename Scalar>
struct LossGrad {
  Scalar value{0};
  Mat<Scalar> grad;
};

struct MiningStats {
  int positives = 0;
  int negative_candidates = 0;
  int negatives_kept = 0;
};

/// Softmax cross-entropy over (background, face) logits, one row per anchor.
/// Positives always contribute; negatives that survive `keep` (empty span =
/// keep all) are ranked by loss and the hardest
/// floor(mining_ratio * max(positives, 1)) are kept. Ignore labels never
/// contribute. Normalized by max(positives, 1).
template <typename Scalar>
LossGrad<Scalar> classification_loss(const Mat<Scalar>& logits, std::span<const std::int8_t> labels,
                                     std::span<const std::uint8_t> keep, double mining_ratio,
                                     MiningStats* stats = nullptr) {
  const Eigen::Index n = logits.rows();
  LossGrad<Scalar> out;
  out.grad = Mat<Scalar>::Zero(n, 2);

  std::vector<Scalar> ce(n, Scalar(0));
  std::vector<Scalar> p_face(n, Scalar(0));
  std::vector<Eigen::Index> candidates;
  int positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar l0 = logits(i, 0);
    const Scalar l1 = logits(i, 1);
    const Scalar m = std::max(l0, l1);
    const Scalar lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    p_face[i] = std::exp(l1 - lse);
    if (labels[i] == kPositive) {
      ce[i] = lse - l1;
      ++positives;
    } else if (labels[i] == kNegative && (keep.empty() || keep[i])) {
      ce[i] = lse - l0;
      candidates.push_back(i);
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return ce[a] > ce[b]; });
  const auto quota = static_cast<std::size_t>(std::floor(mining_ratio * std::max(positives, 1)));
  const std::size_t kept = std::min(quota, candidates.size());

  const Scalar norm = Scalar(std::max(positives, 1));
  auto add = [&](Eigen::Index i, int target) {
    out.value += ce[i];
    const Scalar pf = p_face[i];
    out.grad(i, 0) = ((Scalar(1) - pf) - Scalar(target == 0)) / norm;
    out.grad(i, 1) = (pf - Scalar(target == 1)) / norm;
  };
  for (Eigen::Index i = 0; i < n; ++i)
    if (labels[i] == kPositive) add(i, 1);
  for (std::size_t k = 0; k < kept; ++k) add(candidates[k], 0);
  out.value /= norm;

  if (stats) *stats = {positives, static_cast<int>(candidates.size()), static_cast<int>(kept)};
  return out;
}

/// Smooth-L1 over the rows whose label is positive, normalized by the
/// positive count (clamped to >= 1).
template <typename Scalar>
LossGrad<Scalar> regression_loss(const Mat<Scalar>& pred, const Mat<Scalar>& target,
                                 std::span<const std::int8_t> labels) {
  LossGrad<Scalar> out;
  out.grad = Mat<Scalar>::Zero(pred.rows(), pred.cols());
  int positives = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    if (labels[i] == kPositive) ++positives;
  const Scalar norm = Scalar(std::max(positives, 1));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (labels[i] != kPositive) continue;
    for (Eigen::Index k = 0; k < pred.cols(); ++k) {
      const Scalar d = pred(i, k) - target(i, k);
      const Scalar a = std::abs(d);
      if (a < Scalar(1)) {
        out.value += Scalar(0.5) * d * d;
        out.grad(i, k) = d / norm;
      } else {
        out.value += a - Scalar(0.5);
        out.grad(i, k) = (d > 0 ? Scalar(1) : Scalar(-1)) / norm;
      }
    }
  }
  out.value /= norm;
  return out;
}

/// Binary cross-entropy with logits: max(x,0) - x*t + log(1 + exp(-|x|)).
template <typename Scalar>
Scalar bce_with_logits(Scalar x, Scalar t) {
  return std::max(x, Scalar(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
}

/// Mean per-pixel BCE of each level, averaged over levels. Gradients are
/// returned per level as 1 x cells rows.
template <typename Scalar>
LossGrad<Scalar> segmentation_loss(std::span<const Mat<Scalar>> logits, std::span<const std::vector<float>> targets,
                                   std::vector<Mat<Scalar>>* level_grads) {
  LossGrad<Scalar> out;
  if (level_grads) level_grads->clear();
  const Scalar levels = Scalar(std::max<std::size_t>(logits.size(), 1));
  for (std::size_t l = 0; l < logits.size(); ++l) {
    const Mat<Scalar>& x = logits[l];
    const Eigen::Index n = x.size();
    Mat<Scalar> g = Mat<Scalar>::Zero(x.rows(), x.cols());
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar t = Scalar(targets[l][i]);
      sum += bce_with_logits(x.data()[i], t);
      g.data()[i] = (sigmoid(x.data()[i]) - t) / (Scalar(n) * levels);
    }
    out.value += sum / Scalar(std::max<Eigen::Index>(n, 1));
    if (level_grads) level_grads->push_back(std::move(g));
  }
  out.value /= levels;
  return out;
}

/// IoU of two boxes sharing an anchor point, each given by its distances to
/// the left, top, right and bottom sides.
template <typename Scalar>
Scalar side_distance_iou(const Scalar* p, const Scalar* t) {
  const Scalar ap = (p[0] + p[2]) * (p[1] + p[3]);
  const Scalar at = (t[0] + t[2]) * (t[1] + t[3]);
  const Scalar iw = std::min(p[0], t[0]) + std::min(p[2], t[2]);
  const Scalar ih = std::min(p[1], t[1]) + std::min(p[3], t[3]);
  const Scalar inter = iw * ih;
  return inter / (ap + at - inter);
}

template <typename Scalar>
struct AnchorFreeLoss {
  Scalar value{0};
  Scalar objectness_term{0};
  Scalar iou_term{0};
  Mat<Scalar> objectness_grad;  // same shape as objectness logits
  Mat<Scalar> distance_grad;    // cells x 4
};

/// Mean BCE on objectness over all cells plus -ln(IoU) of predicted vs target
/// side distances averaged over positive cells.
template <typename Scalar>
AnchorFreeLoss<Scalar> anchor_free_loss(const Mat<Scalar>& objectness, const Mat<Scalar>& distances,
                                        std::span<const float> target_objectness, const OffsetMatrix& target_distances,
                                        std::span<const std::uint8_t> positive) {
  constexpr Scalar kEps = Scalar(1e-9);
  AnchorFreeLoss<Scalar> out;
  const Eigen::Index n = objectness.size();
  out.objectness_grad = Mat<Scalar>::Zero(objectness.rows(), objectness.cols());
  out.distance_grad = Mat<Scalar>::Zero(distances.rows(), distances.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar x = objectness.data()[i];
    const Scalar t = Scalar(target_objectness[i]);
    out.objectness_term += bce_with_logits(x, t);
    out.objectness_grad.data()[i] = (sigmoid(x) - t) / Scalar(n);
  }
  out.objectness_term /= Scalar(std::max<Eigen::Index>(n, 1));

  int positives = 0;
  for (Eigen::Index i = 0; i < distances.rows(); ++i) positives += positive[i] ? 1 : 0;
  if (positives > 0) {
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
      if (!positive[i]) continue;
      Scalar p[4], tg[4];
      for (int k = 0; k < 4; ++k) {
        p[k] = distances(i, k);
        tg[k] = Scalar(target_distances(i, k));
      }
      const Scalar ap = (p[0] + p[2]) * (p[1] + p[3]);
      const Scalar at = (tg[0] + tg[2]) * (tg[1] + tg[3]);
      const Scalar iw = std::min(p[0], tg[0]) + std::min(p[2], tg[2]);
      const Scalar ih = std::min(p[1], tg[1]) + std::min(p[3], tg[3]);
      const Scalar inter = iw * ih + kEps;
      const Scalar uni = ap + at - iw * ih + kEps;
      out.iou_term += std::log(uni) - std::log(inter);
      // d(inter)/dp_k and d(area_p)/dp_k for k in {left, top, right, bottom}.
      for (int k = 0; k < 4; ++k) {
        const bool horizontal = (k % 2) == 0;
        const Scalar d_area = horizontal ? (p[1] + p[3]) : (p[0] + p[2]);
        const Scalar d_inter = p[k] < tg[k] ? (horizontal ? ih : iw) : Scalar(0);
        const Scalar d_uni = d_area - d_inter;
        out.distance_grad(i, k) = (d_uni / uni - d_inter / inter) / Scalar(positives);
      }
    }
    out.iou_term /= Scalar(positives);
  }
  out.value = out.objectness_term + out.iou_term;
  return out;
}

struct LossWeights {
  double first_shot = 0.5;
  double regression = 1.0;
  double segmentation = 0.1;
  double anchor_free = 0.1;
  std::vector<double> branches{1.0, 0.5, 0.25};
  double mining_ratio = 3.0;
  double negative_filter_threshold = 0.99;

  static LossWeights from(const LossConfig& c) {
    return {c.first_shot_weight,       c.regression_weight, c.segmentation_weight, c.anchor_free_weight,
            c.branch_weights,          c.mining_ratio,      c.negative_filter_threshold};
  }
};

/// Per-term scalars. Classification and regression terms already carry the
/// branch weights; `total` applies first-shot, regression, segmentation and
/// anchor-free weights.
struct LossReport {
  double total = 0;
  double cls_first = 0;
  double cls_second = 0;
  double reg_first = 0;
  double reg_second = 0;
  double seg = 0;
  double anchor_free = 0;
  int positives_first = 0;
  int positives_second = 0;
  int filtered_negatives = 0;

  double detection_total(const LossWeights& w) const {
    return cls_second + w.regression * reg_second + w.first_shot * (cls_first + w.regression * reg_first);
  }
  double recompute_total(const LossWeights& w) const {
    return detection_total(w) + (w.segmentation * seg + w.anchor_free * anchor_free);
  }
};

namespace detail {

template <typename Scalar>
Mat<Scalar> gather_branch(const std::vector<Tensor<Scalar>>& cls, int branch) {
  Eigen::Index total = 0;
  for (const auto& t : cls) total += t.plane();
  Mat<Scalar> out(total, 2);
  Eigen::Index off = 0;
  for (const auto& t : cls) {
    out.block(off, 0, t.plane(), 2) = t.data.middleRows(2 * branch, 2).transpose();
    off += t.plane();
  }
  return out;
}

template <typename Scalar>
void scatter_branch(const Mat<Scalar>& g, Scalar weight, int branch, std::vector<Tensor<Scalar>>& cls) {
  Eigen::Index off = 0;
  for (auto& t : cls) {
    t.data.middleRows(2 * branch, 2) += weight * g.block(off, 0, t.plane(), 2).transpose();
    off += t.plane();
  }
}

template <typename Scalar>
Mat<Scalar> gather_reg(const std::vector<Tensor<Scalar>>& reg) {
  Eigen::Index total = 0;
  for (const auto& t : reg) total += t.plane();
  Mat<Scalar> out(total, 4);
  Eigen::Index off = 0;
  for (const auto& t : reg) {
    out.block(off, 0, t.plane(), 4) = t.data.transpose();
    off += t.plane();
  }
  return out;
}

template <typename Scalar>
void scatter_reg(const Mat<Scalar>& g, Scalar weight, std::vector<Tensor<Scalar>>& reg) {
  Eigen::Index off = 0;
  for (auto& t : reg) {
    t.data += weight * g.block(off, 0, t.plane(), 4).transpose();
    off += t.plane();
  }
}

inline std::vector<std::int8_t> concat_labels(const std::vector<LevelTargets>& levels, int branch) {
  std::vector<std::int8_t> out;
  for (const auto& l : levels) out.insert(out.end(), l.labels[branch].begin(), l.labels[branch].end());
  return out;
}

template <typename Scalar>
Mat<Scalar> concat_offsets(const std::vector<LevelTargets>& levels) {
  Eigen::Index total = 0;
  for (const auto& l : levels) total += l.offsets.rows();
  Mat<Scalar> out(total, 4);
  Eigen::Index off = 0;
  for (const auto& l : levels) {
    out.block(off, 0, l.offsets.rows(), 4) = l.offsets.template cast<Scalar>();
    off += l.offsets.rows();
  }
  return out;
}

}  // namespace detail

/// Dual-shot objective over every context branch:
///   sum_b w_b [cls_second_b + reg_second_b + beta (cls_first_b + reg_first_b)]
/// with regression on the face branch only. Second-shot face-branch
/// negatives whose first-shot background probability exceeds the filter
/// threshold are dropped before mining. When `grads` is non-null it receives
/// d(total)/d(outputs) for the classification and regression tensors.
template <typename Scalar>
LossReport progressive_anchor_loss(const HeadOutputs<Scalar>& out, const TargetSet& targets, const LossWeights& w,
                                   HeadOutputs<Scalar>* grads) {
  LossReport r;
  const int branches = static_cast<int>(w.branches.size());
  const Mat<Scalar> first_face = detail::gather_branch(out.shots[0].cls, 0);
  std::vector<float> first_background(first_face.rows());
  for (Eigen::Index i = 0; i < first_face.rows(); ++i) {
    const double m = std::max(first_face(i, 0), first_face(i, 1));
    const double e0 = std::exp(double(first_face(i, 0)) - m);
    const double e1 = std::exp(double(first_face(i, 1)) - m);
    first_background[i] = float(e0 / (e0 + e1));
  }

  for (int s = 0; s < 2; ++s) {
    const auto& levels = targets.shots[s];
    const Scalar shot_weight = Scalar(s == 0 ? w.first_shot : 1.0);
    double cls_sum = 0;
    for (int b = 0; b < branches; ++b) {
      const auto labels = detail::concat_labels(levels, b);
      std::vector<std::uint8_t> keep;
      if (s == 1 && b == 0) {
        keep = negative_filter_mask(first_background, labels, w.negative_filter_threshold);
        for (auto k : keep) r.filtered_negatives += k ? 0 : 1;
      }
      MiningStats stats;
      const auto ce = classification_loss<Scalar>(detail::gather_branch(out.shots[s].cls, b), labels, keep,
                                                  w.mining_ratio, &stats);
      cls_sum += w.branches[b] * double(ce.value);
      if (b == 0) (s == 0 ? r.positives_first : r.positives_second) = stats.positives;
      if (grads) detail::scatter_branch(ce.grad, Scalar(w.branches[b]) * shot_weight, b, grads->shots[s].cls);
    }
    const auto face_labels = detail::concat_labels(levels, 0);
    const auto rl =
        regression_loss<Scalar>(detail::gather_reg(out.shots[s].reg), detail::concat_offsets<Scalar>(levels), face_labels);
    const double reg = w.branches[0] * double(rl.value);
    if (grads) detail::scatter_reg(rl.grad, Scalar(w.branches[0] * w.regression) * shot_weight, grads->shots[s].reg);
    if (s == 0) {
      r.cls_first = cls_sum;
      r.reg_first = reg;
    } else {
      r.cls_second = cls_sum;
      r.reg_second = reg;
    }
  }
  r.total = r.detection_total(w);
  return r;
}

/// Full multi-task objective: progressive anchor loss plus weighted
/// segmentation and anchor-free terms.
template <typename Scalar>
LossReport detector_loss(const HeadOutputs<Scalar>& out, const TargetSet& targets, const LossWeights& w,
                         HeadOutputs<Scalar>* grads) {
  LossReport r = progressive_anchor_loss(out, targets, w, grads);

  std::vector<Mat<Scalar>> seg_logits;
  for (const auto& t : out.seg) seg_logits.push_back(t.data);
  std::vector<Mat<Scalar>> seg_grads;
  const auto seg = segmentation_loss<Scalar>(seg_logits, targets.segmentation, grads ? &seg_grads : nullptr);
  r.seg = double(seg.value);

  const auto& af = targets.anchor_free;
  const auto afl = anchor_free_loss<Scalar>(out.af_objectness.data, Mat<Scalar>(out.af_distances.data.transpose()),
                                            af.objectness, af.distances, af.positive);
  r.anchor_free = double(afl.value);

  if (grads) {
    for (std::size_t l = 0; l < seg_grads.size(); ++l) grads->seg[l].data += Scalar(w.segmentation) * seg_grads[l];
    grads->af_objectness.data += Scalar(w.anchor_free) * afl.objectness_grad;
    grads->af_distances.data += Scalar(w.anchor_free) * afl.distance_grad.transpose();
  }
  r.total = r.detection_total(w) + (w.segmentation * r.seg + w.anchor_free * r.anchor_free);
  return r;
}

}  // namespace facedet
