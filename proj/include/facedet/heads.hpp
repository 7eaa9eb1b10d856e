// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "facedet/nn.hpp"

namespace facedet {

/// Per-level detection tensors of one shot. Class logits hold two channels
/// (background, face) per context branch: branch b at channels 2b, 2b+1.
template <typename Scalar>
struct ShotOutputs {
  std::vector<Tensor<Scalar>> cls;
  std::vector<Tensor<Scalar>> reg;  // 4 channels: dx, dy, dw, dh
};

/// Everything the detector emits. The same structure carries gradients
/// during the backward pass.
template <typename Scalar>
struct HeadOutputs {
  std::array<ShotOutputs<Scalar>, 2> shots;  // [first, second]
  std::vector<Tensor<Scalar>> seg;           // per level, 1 channel
  Tensor<Scalar> af_objectness;              // 1 channel at the anchor-free level
  Tensor<Scalar> af_distances;               // 4 channels, pixels, >= 0

  /// Zero tensors shaped like `like`.
  static HeadOutputs zeros_like(const HeadOutputs& like) {
    HeadOutputs z;
    for (int s = 0; s < 2; ++s) {
      for (const auto& t : like.shots[s].cls) z.shots[s].cls.emplace_back(t.channels, t.rows, t.cols);
      for (const auto& t : like.shots[s].reg) z.shots[s].reg.emplace_back(t.channels, t.rows, t.cols);
    }
    for (const auto& t : like.seg) z.seg.emplace_back(t.channels, t.rows, t.cols);
    z.af_objectness = Tensor<Scalar>(like.af_objectness.channels, like.af_objectness.rows, like.af_objectness.cols);
    z.af_distances = Tensor<Scalar>(like.af_distances.channels, like.af_distances.rows, like.af_distances.cols);
    return z;
  }

  bool all_finite() const {
    auto ok = [](const std::vector<Tensor<Scalar>>& v) {
      for (const auto& t : v)
        if (!t.all_finite()) return false;
      return true;
    };
    return ok(shots[0].cls) && ok(shots[0].reg) && ok(shots[1].cls) && ok(shots[1].reg) && ok(seg) &&
           af_objectness.all_finite() && af_distances.all_finite();
  }
};

}  // namespace facedet
