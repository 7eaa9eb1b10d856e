// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "facedet/evaluation.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using facedet::Box;
using facedet::Detection;
using facedet::MatchOutcome;
using facedet::ScoredOutcome;

namespace {

std::vector<ScoredOutcome> scored(const std::vector<std::pair<double, int>>& v) {
  std::vector<ScoredOutcome> out;
  for (auto [s, o] : v) out.push_back({s, MatchOutcome(o)});
  return out;
}

}  // namespace

TEST(Matching, HandCases) {
  const std::vector<Box> gts{Box::from_xywh(0, 0, 10, 10), Box::from_xywh(50, 50, 10, 10)};
  const std::vector<std::uint8_t> ignore{0, 1};
  const std::vector<Detection> dets{{Box::from_xywh(0, 0, 10, 10), 0.9},
                                    {Box::from_xywh(1, 0, 10, 10), 0.8},
                                    {Box::from_xywh(50, 50, 10, 10), 0.7},
                                    {Box::from_xywh(51, 50, 10, 10), 0.6},
                                    {Box::from_xywh(100, 100, 5, 5), 0.5}};
  const auto m = facedet::match_detections(dets, gts, ignore, 0.5);
  const std::vector<MatchOutcome> expect{MatchOutcome::kTruePositive, MatchOutcome::kFalsePositive,
                                         MatchOutcome::kIgnored, MatchOutcome::kIgnored,
                                         MatchOutcome::kFalsePositive};
  EXPECT_EQ(m, expect);
}

TEST(Matching, EqualsBruteForceOracle) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(0, 80), size(5, 30), score(0, 1);
  std::uniform_int_distribution<int> count(0, 64);
  std::bernoulli_distribution ign(0.2);
  for (int inst = 0; inst < 1000; ++inst) {
    std::vector<Box> gts(count(rng));
    std::vector<std::uint8_t> ignore(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
      gts[g] = Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng));
      ignore[g] = ign(rng);
    }
    std::vector<Detection> dets(count(rng));
    for (auto& d : dets) {
      if (!gts.empty() && ign(rng)) {
        const Box& g = gts[rng() % gts.size()];
        d = {Box::from_xywh(g.x_min + score(rng) * 3, g.y_min, g.width(), g.height()), score(rng)};
      } else {
        d = {Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng)), score(rng)};
      }
    }
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const auto got = facedet::match_detections(dets, gts, ignore, 0.5);
    const auto ref = oracle::match(dets, gts, ignore, 0.5);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(int(got[i]), ref[i]) << "instance " << inst << " det " << i;
  }
}

TEST(AveragePrecision, HandCase) {
  const auto c = facedet::pr_curve(scored({{0.9, 1}, {0.8, 0}, {0.7, 1}}), 2);
  ASSERT_TRUE(c);
  EXPECT_NEAR(c->ap, 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(c->recall.back(), 1.0, 1e-12);
}

TEST(AveragePrecision, PerfectAndEmpty) {
  EXPECT_DOUBLE_EQ(facedet::pr_curve(scored({{0.9, 1}, {0.3, 1}, {0.2, 1}}), 3)->ap, 1.0);
  const auto none = facedet::pr_curve({}, 4);
  ASSERT_TRUE(none);
  EXPECT_EQ(none->ap, 0.0);
  EXPECT_EQ(facedet::pr_curve(scored({{0.9, 0}, {0.8, 0}}), 4)->ap, 0.0);
  EXPECT_FALSE(facedet::pr_curve(scored({{0.9, 0}}), 0));
}

TEST(AveragePrecision, IgnoredDetectionsAreNeutral) {
  const auto a = facedet::pr_curve(scored({{0.9, 1}, {0.8, 0}, {0.7, 1}}), 2);
  const auto b = facedet::pr_curve(scored({{0.95, 2}, {0.9, 1}, {0.85, 2}, {0.8, 0}, {0.7, 1}, {0.1, 2}}), 2);
  EXPECT_DOUBLE_EQ(a->ap, b->ap);
}

TEST(AveragePrecision, MatchesEnvelopeOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 1 + int(rng() % 300);
    std::vector<ScoredOutcome> v;
    for (int i = 0; i < n; ++i) v.push_back({u(rng), MatchOutcome(rng() % 3)});
    long gt = 0;
    for (const auto& x : v) gt += x.outcome == MatchOutcome::kTruePositive;
    gt += long(rng() % 5);
    if (gt == 0) gt = 1;
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.score > b.score; });
    std::vector<int> ranks;
    for (const auto& x : sorted) ranks.push_back(int(x.outcome));
    EXPECT_NEAR(facedet::pr_curve(v, gt, 1000)->ap, oracle::envelope_ap(ranks, gt), 1e-12) << inst;
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreTransform) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  std::vector<ScoredOutcome> v;
  for (int i = 0; i < 500; ++i) v.push_back({u(rng), MatchOutcome(rng() % 2)});
  auto t = v;
  for (auto& x : t) x.score = std::log(x.score / (1 - x.score)) * 3 + 7;
  EXPECT_DOUBLE_EQ(facedet::pr_curve(v, 300)->ap, facedet::pr_curve(t, 300)->ap);
}

TEST(AveragePrecision, TiedScoresExtendCutoff) {
  const auto c = facedet::pr_curve(scored({{0.5, 0}, {0.5, 1}, {0.5, 1}}), 2, 3);
  ASSERT_TRUE(c);
  for (double r : c->recall) EXPECT_DOUBLE_EQ(r, 1.0);
  EXPECT_NEAR(c->ap, 2.0 / 3.0, 1e-12);
}

TEST(AveragePrecision, CurveShape) {
  std::vector<std::pair<double, int>> v;
  for (int i = 0; i < 5000; ++i) v.push_back({1.0 - i * 1e-4, i % 3 == 0});
  const auto c = facedet::pr_curve(scored(v), 2000, 100);
  ASSERT_EQ(c->thresholds.size(), 100u);
  for (std::size_t i = 1; i < c->recall.size(); ++i) {
    EXPECT_GE(c->recall[i], c->recall[i - 1]);
    EXPECT_LE(c->thresholds[i], c->thresholds[i - 1]);
  }
}

TEST(DetectionFile, RoundTrip) {
  facedet::DetectionFile f;
  f["a/b.png"] = {{Box::from_xywh(1.5, 2.25, 10, 12.5), 0.875}, {Box::from_xywh(0, 0, 3, 3), 0.125}};
  f["c.png"] = {};
  std::stringstream s;
  facedet::write_detection_file(s, f);
  const auto back = facedet::read_detection_file(s);
  ASSERT_EQ(back.size(), 2u);
  ASSERT_EQ(back.at("a/b.png").size(), 2u);
  EXPECT_EQ(back.at("a/b.png")[0].box, f["a/b.png"][0].box);
  EXPECT_EQ(back.at("a/b.png")[1].score, 0.125);
  EXPECT_TRUE(back.at("c.png").empty());
}

TEST(DetectionFile, MalformedReportsLine) {
  std::istringstream in("a.png\n2\n1 2 3 4 0.5\n1 2 x 4 0.5\n");
  try {
    facedet::read_detection_file(in);
    FAIL();
  } catch (const facedet::FormatError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  std::istringstream trunc("a.png\n2\n1 2 3 4 0.5\n");
  EXPECT_THROW(facedet::read_detection_file(trunc), facedet::FormatError);
}

TEST(Subsets, OutOfSubsetFacesAreIgnored) {
  facedet::AnnotationRecord r{"img.png", {}};
  r.faces.push_back({0, 0, 40, 40, {}});
  r.faces.push_back({100, 100, 10, 10, {}});
  facedet::AnnotationRecord inv{"inv.png", {}};
  inv.faces.push_back({0, 0, 40, 40, {0, 0, 0, 1, 0, 0}});
  inv.faces.push_back({60, 60, 40, 40, {}});
  const std::vector<facedet::AnnotationRecord> records{r, inv};

  facedet::SubsetLists lists;
  lists.easy = facedet::SubsetList{{"img.png", {0}}, {"inv.png", {1}}};
  lists.hard = facedet::SubsetList{{"img.png", {0, 1}}, {"inv.png", {1}}};
  lists.medium = facedet::SubsetList{{"img.png", {}}, {"inv.png", {}}};

  facedet::DetectionFile dets;
  dets["img.png"] = {{Box::from_xywh(0, 0, 40, 40), 0.9}, {Box::from_xywh(100, 100, 10, 10), 0.8}};
  dets["inv.png"] = {{Box::from_xywh(0, 0, 40, 40), 0.95}, {Box::from_xywh(60, 60, 40, 40), 0.7}};
  const auto res = facedet::evaluate_subsets(dets, records, lists);
  ASSERT_TRUE(res.easy);
  ASSERT_TRUE(res.hard);
  EXPECT_FALSE(res.medium);
  EXPECT_DOUBLE_EQ(res.easy->ap, 1.0);
  EXPECT_DOUBLE_EQ(res.hard->ap, 1.0);
  EXPECT_EQ(res.easy->num_gt, 2);
  EXPECT_EQ(res.hard->num_gt, 3);

  const auto j = facedet::metrics_json(res);
  EXPECT_TRUE(j.at("medium").is_null());
  EXPECT_DOUBLE_EQ(j.at("easy").get<double>(), 1.0);
}

TEST(Subsets, MissingListAndMissingDetections) {
  facedet::AnnotationRecord r{"img.png", {{0, 0, 40, 40, {}}}};
  facedet::AnnotationRecord s{"other.png", {{0, 0, 40, 40, {}}}};
  facedet::SubsetLists lists;
  lists.hard = facedet::SubsetList{{"img.png", {0}}, {"other.png", {0}}};
  facedet::DetectionFile dets;
  dets["img.png"] = {{Box::from_xywh(0, 0, 40, 40), 0.9}};
  const auto res = facedet::evaluate_subsets(dets, {r, s}, lists);
  EXPECT_FALSE(res.easy);
  ASSERT_TRUE(res.hard);
  EXPECT_DOUBLE_EQ(res.hard->ap, 0.5);
  EXPECT_FALSE(res.warnings.empty());
}

TEST(Plot, LegendCarriesAp) {
  const auto path = fs::temp_directory_path() / "facedet_eval_plot.svg";
  fs::remove(path);
  const auto c = facedet::pr_curve(scored({{0.9, 1}, {0.8, 1}}), 2);
  const auto h = facedet::pr_curve(scored({{0.9, 1}, {0.8, 0}, {0.7, 1}}), 2);
  facedet::emit_pr_plot({{"easy", *c}, {"hard", *h}}, path);
  std::ifstream in(path);
  std::stringstream text;
  text << in.rdbuf();
  EXPECT_NE(text.str().find("facedet-1.000"), std::string::npos);
  EXPECT_NE(text.str().find("facedet-0.833"), std::string::npos);
  EXPECT_NE(text.str().find("<svg"), std::string::npos);
  fs::remove(path);
  EXPECT_THROW(facedet::emit_pr_plot({{"easy", *c}}, "/dev/null/x.svg"), std::runtime_error);
}

TEST(Plot, CurvesSurviveMetricsJson) {
  facedet::SubsetResults res;
  res.easy = facedet::pr_curve(scored({{0.9, 1}, {0.8, 0}, {0.7, 1}}), 2);
  const auto curves = facedet::curves_from_metrics(facedet::metrics_json(res));
  ASSERT_EQ(curves.size(), 1u);
  EXPECT_EQ(curves[0].first, "easy");
  EXPECT_DOUBLE_EQ(curves[0].second.ap, res.easy->ap);
  EXPECT_EQ(curves[0].second.recall, res.easy->recall);
}
