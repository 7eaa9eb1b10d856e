// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <gtest/gtest.h>

#include "facedet/losses.hpp"
#include "oracles.hpp"

using facedet::Mat;
using MatD = facedet::Mat<double>;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-4;
constexpr double kFloor = 1e-6;

std::vector<double> flatten(const MatD& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

MatD unflatten(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  MatD m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

template <typename F>
void expect_gradient(F&& loss_of, std::vector<double> x, const MatD& analytic, const char* what) {
  ASSERT_EQ(std::size_t(analytic.size()), x.size());
  ASSERT_LE(x.size(), 256u);
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = oracle::central_difference(loss_of, x, i, kStep);
    worst = std::max(worst, oracle::rel_error(analytic.data()[i], fd, kFloor));
  }
  EXPECT_LT(worst, kTol) << what;
}

std::vector<std::int8_t> random_labels(std::mt19937_64& rng, int n, double p_pos, double p_ign) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::int8_t> l(n);
  for (auto& v : l) {
    const double r = u(rng);
    v = r < p_pos ? facedet::kPositive : (r < p_pos + p_ign ? facedet::kIgnore : facedet::kNegative);
  }
  return l;
}

MatD random_mat(std::mt19937_64& rng, int rows, int cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST(ClosedForm, Classification) {
  MatD logits(2, 2);
  logits << 0, 0, 0, std::log(3.0);
  const std::vector<std::int8_t> labels{facedet::kPositive, facedet::kNegative};
  const auto r = facedet::classification_loss<double>(logits, labels, {}, 3.0);
  EXPECT_NEAR(r.value, std::log(2.0) + std::log(4.0), 1e-12);
  EXPECT_NEAR(r.grad(0, 1), -0.5, 1e-12);
  EXPECT_NEAR(r.grad(1, 1), 0.75, 1e-12);
}

TEST(ClosedForm, SmoothL1) {
  MatD p(1, 4), t(1, 4);
  p << 0.5, 3, -2, 0;
  t << 0, 0, 0, 0;
  const std::vector<std::int8_t> labels{facedet::kPositive};
  const auto r = facedet::regression_loss<double>(p, t, labels);
  EXPECT_NEAR(r.value, 0.125 + 2.5 + 1.5, 1e-12);
  EXPECT_NEAR(r.grad(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(r.grad(0, 2), -1.0, 1e-12);
}

TEST(ClosedForm, BceAndSideIou) {
  EXPECT_NEAR(facedet::bce_with_logits(0.0, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(facedet::bce_with_logits(50.0, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(facedet::bce_with_logits(50.0, 0.0), 50.0, 1e-9);
  const double a[4] = {1, 1, 1, 1}, b[4] = {2, 2, 2, 2};
  EXPECT_NEAR(facedet::side_distance_iou(a, a), 1.0, 1e-12);
  EXPECT_NEAR(facedet::side_distance_iou(a, b), 0.25, 1e-12);
}

TEST(Mining, KeepsRatioTimesPositives) {
  std::mt19937_64 rng(1);
  const MatD logits = random_mat(rng, 22, 2, -2, 2);
  std::vector<std::int8_t> labels(22, facedet::kNegative);
  labels[0] = labels[1] = facedet::kPositive;
  facedet::MiningStats s;
  facedet::classification_loss<double>(logits, labels, {}, 3.0, &s);
  EXPECT_EQ(s.positives, 2);
  EXPECT_EQ(s.negative_candidates, 20);
  EXPECT_EQ(s.negatives_kept, 6);

  std::vector<std::int8_t> none(22, facedet::kNegative);
  const auto r = facedet::classification_loss<double>(logits, none, {}, 3.0, &s);
  EXPECT_EQ(s.negatives_kept, 3);
  int nonzero = 0;
  for (int i = 0; i < 22; ++i) nonzero += r.grad(i, 0) != 0.0;
  EXPECT_EQ(nonzero, 3);
}

TEST(Mining, KeepsHardestAndHonorsMask) {
  MatD logits(4, 2);
  logits << 0, 5, 0, 1, 0, 3, 0, -1;  // negatives ranked by face logit
  const std::vector<std::int8_t> labels(4, facedet::kNegative);
  const std::vector<std::uint8_t> keep{0, 1, 1, 1};
  facedet::MiningStats s;
  const auto r = facedet::classification_loss<double>(logits, labels, keep, 2.0, &s);
  EXPECT_EQ(s.negative_candidates, 3);
  EXPECT_EQ(s.negatives_kept, 2);
  EXPECT_EQ(r.grad(0, 1), 0.0);
  EXPECT_NE(r.grad(1, 1), 0.0);
  EXPECT_NE(r.grad(2, 1), 0.0);
  EXPECT_EQ(r.grad(3, 1), 0.0);
  EXPECT_NEAR(r.value, std::log1p(std::exp(3.0)) + std::log1p(std::exp(1.0)), 1e-12);
}

TEST(Mining, IgnoreNeverContributes) {
  MatD logits(3, 2);
  logits << 0, 9, 0, 9, 1, 0;
  const std::vector<std::int8_t> labels{facedet::kIgnore, facedet::kIgnore, facedet::kPositive};
  const auto r = facedet::classification_loss<double>(logits, labels, {}, 3.0);
  EXPECT_EQ(r.grad.row(0).squaredNorm(), 0.0);
  EXPECT_EQ(r.grad.row(1).squaredNorm(), 0.0);
}

TEST(GradCheck, Classification) {
  std::mt19937_64 rng(11);
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 96;
    const MatD logits = random_mat(rng, n, 2, -3, 3);
    const auto labels = random_labels(rng, n, 0.1, 0.1);
    const auto analytic = facedet::classification_loss<double>(logits, labels, {}, 3.0);
    auto f = [&](const std::vector<double>& x) {
      return facedet::classification_loss<double>(unflatten(x, n, 2), labels, {}, 3.0).value;
    };
    expect_gradient(f, flatten(logits), analytic.grad, "classification");
  }
}

TEST(GradCheck, Regression) {
  std::mt19937_64 rng(12);
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 64;
    MatD pred = random_mat(rng, n, 4, -3, 3);
    const MatD target = random_mat(rng, n, 4, -1, 1);
    for (Eigen::Index i = 0; i < pred.size(); ++i)
      if (std::abs(std::abs(pred.data()[i] - target.data()[i]) - 1.0) < 1e-3) pred.data()[i] += 0.01;
    const auto labels = random_labels(rng, n, 0.4, 0.1);
    const auto analytic = facedet::regression_loss<double>(pred, target, labels);
    auto f = [&](const std::vector<double>& x) {
      return facedet::regression_loss<double>(unflatten(x, n, 4), target, labels).value;
    };
    expect_gradient(f, flatten(pred), analytic.grad, "regression");
  }
}

TEST(GradCheck, Segmentation) {
  std::mt19937_64 rng(13);
  std::bernoulli_distribution coin(0.3);
  for (int inst = 0; inst < 10; ++inst) {
    const std::vector<int> sizes{100, 64, 16};
    std::vector<MatD> logits;
    std::vector<std::vector<float>> targets;
    for (int s : sizes) {
      logits.push_back(random_mat(rng, 1, s, -4, 4));
      std::vector<float> t(s);
      for (auto& v : t) v = coin(rng) ? 1.0f : 0.0f;
      targets.push_back(t);
    }
    std::vector<MatD> grads;
    facedet::segmentation_loss<double>(logits, targets, &grads);
    std::vector<double> x;
    MatD all(1, 180);
    int off = 0;
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      for (int i = 0; i < sizes[l]; ++i) {
        x.push_back(logits[l](0, i));
        all(0, off + i) = grads[l](0, i);
      }
      off += sizes[l];
    }
    auto f = [&](const std::vector<double>& v) {
      std::vector<MatD> m;
      int o = 0;
      for (int s : sizes) {
        MatD row(1, s);
        for (int i = 0; i < s; ++i) row(0, i) = v[o + i];
        m.push_back(row);
        o += s;
      }
      return facedet::segmentation_loss<double>(m, targets, nullptr).value;
    };
    expect_gradient(f, x, all, "segmentation");
  }
}

TEST(GradCheck, AnchorFree) {
  std::mt19937_64 rng(14);
  std::bernoulli_distribution coin(0.4);
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 40;  // 40 objectness + 160 distances
    const MatD obj = random_mat(rng, 1, n, -3, 3);
    MatD dist = random_mat(rng, n, 4, 0.5, 12);
    facedet::OffsetMatrix tdist(n, 4);
    std::vector<float> tobj(n);
    std::vector<std::uint8_t> pos(n);
    std::uniform_real_distribution<double> u(0.5, 12);
    for (int i = 0; i < n; ++i) {
      pos[i] = coin(rng);
      tobj[i] = pos[i] ? 1.0f : 0.0f;
      for (int k = 0; k < 4; ++k) {
        tdist(i, k) = float(u(rng));
        if (std::abs(dist(i, k) - tdist(i, k)) < 1e-3) dist(i, k) += 0.01;
      }
    }
    const auto a = facedet::anchor_free_loss<double>(obj, dist, tobj, tdist, pos);
    auto fo = [&](const std::vector<double>& x) {
      return facedet::anchor_free_loss<double>(unflatten(x, 1, n), dist, tobj, tdist, pos).value;
    };
    expect_gradient(fo, flatten(obj), a.objectness_grad, "anchor-free objectness");
    auto fd = [&](const std::vector<double>& x) {
      return facedet::anchor_free_loss<double>(obj, unflatten(x, n, 4), tobj, tdist, pos).value;
    };
    expect_gradient(fd, flatten(dist), a.distance_grad, "anchor-free distances");
  }
}

TEST(AnchorFree, PerfectPredictionHasZeroIouTerm) {
  facedet::OffsetMatrix t(1, 4);
  t << 3, 4, 5, 6;
  MatD d(1, 4);
  d << 3, 4, 5, 6;
  const std::vector<float> tobj{1};
  const std::vector<std::uint8_t> pos{1};
  const auto r = facedet::anchor_free_loss<double>(MatD::Constant(1, 1, 0.0), d, tobj, t, pos);
  EXPECT_NEAR(r.iou_term, 0.0, 1e-9);
}

namespace {

struct DetectorCase {
  facedet::DetectorConfig cfg = facedet::DetectorConfig::desk_scale();
  facedet::AnchorPyramid pyramid;
  facedet::TargetSet targets;
  facedet::HeadOutputs<double> out;
};

DetectorCase make_case(std::uint64_t seed) {
  DetectorCase c;
  c.pyramid = facedet::build_anchor_pyramid(160, c.cfg);
  facedet::Sample s;
  s.image = cv::Mat::zeros(160, 160, CV_8UC3);
  s.boxes = {facedet::Box::from_xywh(20, 30, 24, 26), facedet::Box::from_xywh(90, 80, 50, 48),
             facedet::Box::from_xywh(120, 10, 8, 9)};
  s.attributes.resize(3);
  c.targets = facedet::build_targets(s, c.pyramid, c.cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  auto fill = [&](int ch, int rows, int cols, double scale, double shift) {
    facedet::Tensor<double> t(ch, rows, cols);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = shift + scale * g(rng);
    return t;
  };
  for (int shot = 0; shot < 2; ++shot)
    for (const auto& grid : c.pyramid.second) {
      c.out.shots[shot].cls.push_back(fill(6, grid.rows, grid.cols, 1.0, 0.0));
      c.out.shots[shot].reg.push_back(fill(4, grid.rows, grid.cols, 1.0, 0.0));
    }
  for (const auto& grid : c.pyramid.second) c.out.seg.push_back(fill(1, grid.rows, grid.cols, 1.0, 0.0));
  const auto& af = c.pyramid.second[0];
  c.out.af_objectness = fill(1, af.rows, af.cols, 1.0, 0.0);
  c.out.af_distances = fill(4, af.rows, af.cols, 1.0, 6.0);
  c.out.af_distances.data = c.out.af_distances.data.cwiseAbs().cwiseMax(0.5);
  return c;
}

// Every scalar of the head outputs, in a fixed order.
std::vector<double*> coordinates(facedet::HeadOutputs<double>& h) {
  std::vector<double*> v;
  auto add = [&](facedet::Tensor<double>& t) {
    for (Eigen::Index i = 0; i < t.data.size(); ++i) v.push_back(t.data.data() + i);
  };
  for (auto& s : h.shots) {
    for (auto& t : s.cls) add(t);
    for (auto& t : s.reg) add(t);
  }
  for (auto& t : h.seg) add(t);
  add(h.af_objectness);
  add(h.af_distances);
  return v;
}

}  // namespace

TEST(GradCheck, FullObjectiveOnSampledCoordinates) {
  auto c = make_case(21);
  const facedet::LossWeights w = facedet::LossWeights::from(c.cfg.losses);
  auto grads = facedet::HeadOutputs<double>::zeros_like(c.out);
  facedet::detector_loss(c.out, c.targets, w, &grads);
  auto xs = coordinates(c.out);
  auto gs = coordinates(grads);
  std::mt19937_64 rng(5);
  std::vector<std::size_t> pick;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < gs.size(); ++i)
    if (*gs[i] != 0.0) active.push_back(i);
  ASSERT_GT(active.size(), 50u);
  std::shuffle(active.begin(), active.end(), rng);
  for (std::size_t i = 0; i < 128; ++i) pick.push_back(active[i]);
  std::uniform_int_distribution<std::size_t> any(0, xs.size() - 1);
  while (pick.size() < 256) pick.push_back(any(rng));

  const double h = 1e-4;
  double worst = 0;
  for (std::size_t i : pick) {
    const double keep = *xs[i];
    *xs[i] = keep + h;
    const double up = facedet::detector_loss<double>(c.out, c.targets, w, nullptr).total;
    *xs[i] = keep - h;
    const double down = facedet::detector_loss<double>(c.out, c.targets, w, nullptr).total;
    *xs[i] = keep;
    worst = std::max(worst, oracle::rel_error(*gs[i], (up - down) / (2 * h), kFloor));
  }
  EXPECT_LT(worst, kTol);
}

TEST(Objective, TotalRecomputesFromTerms) {
  auto c = make_case(3);
  const auto w = facedet::LossWeights::from(c.cfg.losses);
  const auto r = facedet::detector_loss<double>(c.out, c.targets, w, nullptr);
  EXPECT_NEAR(r.total, r.recompute_total(w), 1e-9 * std::abs(r.total));
  EXPECT_GT(r.positives_second, 0);
  EXPECT_GT(r.positives_first, 0);
  EXPECT_GT(r.seg, 0);
  EXPECT_GT(r.anchor_free, 0);
}

TEST(Objective, LinearInFirstShotWeight) {
  auto c = make_case(4);
  auto w = facedet::LossWeights::from(c.cfg.losses);
  w.first_shot = 0.0;
  const double t0 = facedet::progressive_anchor_loss<double>(c.out, c.targets, w, nullptr).total;
  w.first_shot = 1.0;
  const double t1 = facedet::progressive_anchor_loss<double>(c.out, c.targets, w, nullptr).total;
  w.first_shot = 0.5;
  const auto r = facedet::progressive_anchor_loss<double>(c.out, c.targets, w, nullptr);
  EXPECT_NEAR(r.total, t0 + 0.5 * (t1 - t0), 1e-9 * std::abs(r.total));
  EXPECT_NEAR(t1 - t0, r.cls_first + w.regression * r.reg_first, 1e-9 * std::abs(t1));
}

TEST(Objective, ZeroFirstShotWeightZeroesFirstShotGradients) {
  auto c = make_case(6);
  auto w = facedet::LossWeights::from(c.cfg.losses);
  w.first_shot = 0.0;
  auto grads = facedet::HeadOutputs<double>::zeros_like(c.out);
  facedet::progressive_anchor_loss(c.out, c.targets, w, &grads);
  for (const auto& t : grads.shots[0].cls) EXPECT_EQ(t.data.squaredNorm(), 0.0);
  for (const auto& t : grads.shots[0].reg) EXPECT_EQ(t.data.squaredNorm(), 0.0);
  double second = 0;
  for (const auto& t : grads.shots[1].cls) second += t.data.squaredNorm();
  EXPECT_GT(second, 0.0);
}

TEST(Objective, NegativeFilterDropsConfidentBackground) {
  auto c = make_case(8);
  auto w = facedet::LossWeights::from(c.cfg.losses);
  for (auto& t : c.out.shots[0].cls) t.data.row(0).array() += 10.0;  // background logit
  const auto filtered = facedet::progressive_anchor_loss<double>(c.out, c.targets, w, nullptr);
  EXPECT_GT(filtered.filtered_negatives, 0);
  w.negative_filter_threshold = 1.0;
  const auto open = facedet::progressive_anchor_loss<double>(c.out, c.targets, w, nullptr);
  EXPECT_EQ(open.filtered_negatives, 0);
  EXPECT_EQ(open.positives_second, filtered.positives_second);
}
