// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "facedet/anchors.hpp"
#include "facedet/checkpoint.hpp"
#include "facedet/commands.hpp"
#include "facedet/evaluation.hpp"
#include "facedet/losses.hpp"
#include "facedet/network.hpp"
#include "facedet/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using facedet::Box;
using facedet::DetectorConfig;
using facedet::Detection;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("facedet_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

Verdict mixture() {
  const auto t0 = Clock::now();
  facedet::SamplerConfig cfg;
  facedet::Rng rng(2026);
  const long n = 100000;
  long hits = 0;
  for (long i = 0; i < n; ++i) hits += facedet::select_strategy(cfg, rng) == facedet::SamplingStrategy::kBalancedAnchor;
  const double frac = double(hits) / n, secs = seconds_since(t0);
  return {std::abs(frac - 0.8) <= 0.01 && secs < 10, fmt("balanced fraction %.4f (target 0.80 +- 0.01), %.2f s", frac, secs)};
}

Verdict bdas_uniformity() {
  facedet::SamplerConfig cfg;
  double worst_cell = 0, worst_p = 1;
  int ks_tests = 0;
  for (double face : {10.0, 40.0, 90.0, 200.0, 700.0}) {
    const int top = std::min(5, facedet::nearest_anchor_index(face, cfg.anchor_sizes) + 1);
    facedet::Rng rng(static_cast<std::uint64_t>(face * 7));
    const long n = 120000;
    std::vector<long> counts(6, 0);
    std::map<int, std::vector<double>> sizes;
    for (long i = 0; i < n; ++i) {
      const auto d = facedet::bdas_target_size(face, cfg, rng);
      ++counts[d.anchor_index];
      sizes[d.anchor_index].push_back(d.size);
    }
    for (int i = 0; i < 6; ++i) {
      const double expect = i <= top ? 1.0 / (top + 1) : 0.0;
      worst_cell = std::max(worst_cell, std::abs(double(counts[i]) / n - expect));
    }
    for (const auto& [idx, xs] : sizes) {
      const double lo = cfg.anchor_sizes[idx] * cfg.size_interval_lo, hi = cfg.anchor_sizes[idx] * cfg.size_interval_hi;
      const double d = oracle::ks_statistic(xs, [&](double x) { return std::clamp((x - lo) / (hi - lo), 0.0, 1.0); });
      worst_p = std::min(worst_p, oracle::ks_pvalue(d, xs.size()));
      ++ks_tests;
    }
  }
  // Family-wise alpha 0.01 over all per-interval tests (Bonferroni).
  const double per_test = 0.01 / ks_tests;
  return {worst_cell <= 0.01 && worst_p > per_test,
          fmt("max cell deviation %.4f (limit 0.01), min KS p-value %.4f over %.0f tests (family-wise alpha 0.01, "
              "per test %.5f)",
              worst_cell, worst_p, ks_tests, per_test)};
}

Verdict balance_direction() {
  facedet::SampleStatsArgs args;
  args.draws = 100000;
  std::ostringstream out, err;
  const int code = facedet::cmd_sample_stats(args, {out, err});
  if (code != 0) return {false, "cmd_sample_stats exit " + std::to_string(code) + ": " + err.str()};
  const auto j = nlohmann::json::parse(out.str());
  const double b = j.at("bdas").at("mass_32_128"), d = j.at("das").at("mass_32_128");
  return {b > d, fmt("[32,128] mass: BDAS %.4f vs DAS %.4f over 100000 draws", b, d)};
}

Verdict geometry_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> pos(0, 100), size(4, 40), unit(0, 1);
  std::uniform_int_distribution<int> count(0, 64), quant(0, 20);
  int nms_bad = 0, match_bad = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    std::vector<Detection> d(count(rng));
    for (auto& x : d) x = {Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng)), quant(rng) / 20.0};
    const double thr = 0.1 + 0.1 * (inst % 7);
    const auto kept = facedet::nms(d, thr, 1000);
    const auto ref = oracle::nms_indices(d, thr, 1000);
    bool same = kept.size() == ref.size();
    for (std::size_t k = 0; same && k < ref.size(); ++k)
      same = kept[k].box == d[ref[k]].box && kept[k].score == d[ref[k]].score;
    nms_bad += !same;
  }
  for (int inst = 0; inst < 1000; ++inst) {
    std::vector<Box> gts(count(rng));
    std::vector<std::uint8_t> ignore(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
      gts[g] = Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng));
      ignore[g] = unit(rng) < 0.2;
    }
    std::vector<Detection> dets(count(rng));
    for (auto& x : dets) {
      if (!gts.empty() && unit(rng) < 0.5) {
        const Box& g = gts[rng() % gts.size()];
        x = {Box::from_xywh(g.x_min + 4 * unit(rng) - 2, g.y_min + 4 * unit(rng) - 2, g.width(), g.height()), unit(rng)};
      } else {
        x = {Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng)), unit(rng)};
      }
    }
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const auto got = facedet::match_detections(dets, gts, ignore, 0.5);
    const auto ref = oracle::match(dets, gts, ignore, 0.5);
    bool same = got.size() == ref.size();
    for (std::size_t i = 0; same && i < ref.size(); ++i) same = int(got[i]) == ref[i];
    match_bad += !same;
  }
  const double secs = seconds_since(t0);
  return {nms_bad == 0 && match_bad == 0 && secs < 30,
          fmt("mismatches: NMS %.0f/1000, matching %.0f/1000, %.2f s", nms_bad, match_bad, secs)};
}

Verdict encode_decode() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> pos(0, 640), size(2, 512);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const Box gt = Box::from_center(pos(rng), pos(rng), size(rng), size(rng));
    const Box anchor = Box::from_center(pos(rng), pos(rng), size(rng), size(rng));
    const Box back = facedet::decode(facedet::encode(gt, anchor), anchor);
    const double got[4] = {back.x_min, back.y_min, back.x_max, back.y_max};
    const double want[4] = {gt.x_min, gt.y_min, gt.x_max, gt.y_max};
    for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(got[k] - want[k]) / std::max(std::abs(want[k]), 1.0));
  }
  return {worst < 1e-5, fmt("max relative error %.3g over 10000 pairs (limit 1e-5)", worst)};
}

Verdict progressive_anchors() {
  bool halves = true;
  for (const auto& cfg : {DetectorConfig::desk_scale(), DetectorConfig::full_scale()}) {
    const auto p = facedet::build_anchor_pyramid(cfg.crop_size(), cfg);
    for (int l = 0; l < p.levels(); ++l) {
      halves = halves && p.first[l].anchor_size * 2 == p.second[l].anchor_size;
      for (std::size_t c = 0; c < p.first[l].boxes.size(); ++c)
        halves = halves && p.first[l].boxes[c].width() * 2 == p.second[l].boxes[c].width();
    }
  }
  facedet::Detector det(DetectorConfig::desk_scale());
  det.initialize(6);
  cv::Mat img(160, 160, CV_8UC3);
  cv::randu(img, 0, 255);
  facedet::InferenceTrace trace;
  det.detect(img, &trace);
  bool pure = !trace.consumed.empty();
  for (const auto& name : trace.consumed) {
    const bool second = name.rfind("second/", 0) == 0;
    const bool cls = name.find("/cls/") != std::string::npos;
    pure = pure && second && (!cls || name.ends_with("/face"));
  }
  for (const auto& name : trace.computed) pure = pure && name.rfind("second/", 0) == 0;
  return {halves && pure, std::string("first-shot anchors half size at every level: ") + (halves ? "yes" : "no") +
                              "; inference consumed " + std::to_string(trace.consumed.size()) +
                              " tensors, all second-shot face branch: " + (pure ? "yes" : "no")};
}

Verdict dense_context() {
  const auto cfg = DetectorConfig::desk_scale();
  facedet::DetectorNet<double> net(cfg);
  net.init(7);
  bool law = true, reach = true;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int l = 0; l < cfg.num_levels(); ++l) {
    auto& m = net.context(l);
    for (int s = 1; s <= m.stages(); ++s)
      law = law && m.stage_input_channels(s) == m.in_channels() + (s - 1) * cfg.network.dense_growth;
    facedet::Tensor<double> x(m.in_channels(), 6, 6);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = u(rng);
    const auto base = m.forward(x);
    for (int s = 1; s <= m.stages(); ++s) {
      law = law && m.stage_inputs()[s - 1].channels == m.in_channels() + (s - 1) * cfg.network.dense_growth;
      m.set_ablation(s);
      reach = reach && (m.forward(x).data - base.data).cwiseAbs().maxCoeff() > 1e-9;
    }
    m.set_ablation(std::nullopt);
  }
  return {law && reach, std::string("channel law in + (l-1) x growth: ") + (law ? "holds" : "violated") +
                            "; every stage ablation changes the module output: " + (reach ? "yes" : "no")};
}

template <typename F>
double max_fd_error(F&& f, std::vector<double> x, const facedet::Mat<double>& grad) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, oracle::rel_error(grad.data()[i], oracle::central_difference(f, x, i, 1e-6), 1e-6));
  return worst;
}

Verdict gradient_checks() {
  using M = facedet::Mat<double>;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> u(-3, 3), pos(0.5, 10), unit(0, 1);
  double cls = 0, reg = 0, seg = 0, af = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 64;
    M logits(n, 2), pred(n, 4), target(n, 4);
    std::vector<std::int8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      logits(i, 0) = u(rng);
      logits(i, 1) = u(rng);
      const double r = unit(rng);
      labels[i] = r < 0.15 ? facedet::kPositive : (r < 0.25 ? facedet::kIgnore : facedet::kNegative);
      for (int k = 0; k < 4; ++k) {
        target(i, k) = u(rng) / 3;
        do pred(i, k) = u(rng);
        while (std::abs(std::abs(pred(i, k) - target(i, k)) - 1) < 1e-3);
      }
    }
    auto as_vec = [](const M& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
    auto as_mat = [](const std::vector<double>& v, int r, int c) {
      M m(r, c);
      std::copy(v.begin(), v.end(), m.data());
      return m;
    };
    cls = std::max(cls, max_fd_error(
                            [&](const std::vector<double>& v) {
                              return facedet::classification_loss<double>(as_mat(v, n, 2), labels, {}, 3.0).value;
                            },
                            as_vec(logits), facedet::classification_loss<double>(logits, labels, {}, 3.0).grad));
    reg = std::max(reg, max_fd_error(
                            [&](const std::vector<double>& v) {
                              return facedet::regression_loss<double>(as_mat(v, n, 4), target, labels).value;
                            },
                            as_vec(pred), facedet::regression_loss<double>(pred, target, labels).grad));

    std::vector<M> seg_logits{M(1, 150), M(1, 90)};
    std::vector<std::vector<float>> seg_targets{std::vector<float>(150), std::vector<float>(90)};
    for (int l = 0; l < 2; ++l)
      for (Eigen::Index i = 0; i < seg_logits[l].size(); ++i) {
        seg_logits[l].data()[i] = u(rng);
        seg_targets[l][i] = unit(rng) < 0.3 ? 1.0f : 0.0f;
      }
    std::vector<M> seg_grads;
    facedet::segmentation_loss<double>(seg_logits, seg_targets, &seg_grads);
    M seg_flat(1, 240);
    seg_flat << seg_grads[0], seg_grads[1];
    std::vector<double> seg_x = as_vec(seg_logits[0]);
    for (Eigen::Index i = 0; i < 90; ++i) seg_x.push_back(seg_logits[1].data()[i]);
    seg = std::max(seg, max_fd_error(
                            [&](const std::vector<double>& v) {
                              std::vector<M> m{as_mat({v.begin(), v.begin() + 150}, 1, 150),
                                               as_mat({v.begin() + 150, v.end()}, 1, 90)};
                              return facedet::segmentation_loss<double>(m, seg_targets, nullptr).value;
                            },
                            seg_x, seg_flat));

    const int cells = 48;
    M obj(1, cells), dist(cells, 4);
    facedet::OffsetMatrix tdist(cells, 4);
    std::vector<float> tobj(cells);
    std::vector<std::uint8_t> positive(cells);
    for (int i = 0; i < cells; ++i) {
      obj(0, i) = u(rng);
      positive[i] = unit(rng) < 0.4;
      tobj[i] = positive[i];
      for (int k = 0; k < 4; ++k) {
        tdist(i, k) = float(pos(rng));
        do dist(i, k) = pos(rng);
        while (std::abs(dist(i, k) - tdist(i, k)) < 1e-3);
      }
    }
    const auto a = facedet::anchor_free_loss<double>(obj, dist, tobj, tdist, positive);
    af = std::max(af, max_fd_error(
                          [&](const std::vector<double>& v) {
                            return facedet::anchor_free_loss<double>(as_mat(v, 1, cells), dist, tobj, tdist, positive)
                                .value;
                          },
                          as_vec(obj), a.objectness_grad));
    af = std::max(af, max_fd_error(
                          [&](const std::vector<double>& v) {
                            return facedet::anchor_free_loss<double>(obj, as_mat(v, cells, 4), tobj, tdist, positive)
                                .value;
                          },
                          as_vec(dist), a.distance_grad));
  }
  const double secs = seconds_since(t0);
  const double worst = std::max({cls, reg, seg, af});
  return {worst < 1e-4 && secs < 60,
          fmt("max relative error cls %.2g, reg %.2g, seg %.2g, anchor-free ", cls, reg, seg) +
              fmt("%.2g (limit 1e-4), %.2f s", af, secs)};
}

Verdict lr_schedule() {
  bool ok = true;
  double worst = 0;
  for (double s : {1.0, 0.5, 0.1, 0.05, 0.01, 0.001}) {
    facedet::OptimConfig o;
    o.scale = s;
    const double a = facedet::lr_at(0, o), b = facedet::lr_at(o.scaled(3000), o);
    const double c = facedet::lr_at(o.scaled(100000), o), d = facedet::lr_at(o.scaled(120000), o);
    worst = std::max({worst, std::abs(a - 1e-6) / 1e-6, std::abs(b - 4e-3) / 4e-3, std::abs(c - 4e-5) / 4e-5,
                      std::abs(d - 4e-5) / 4e-5});
  }
  ok = worst < 1e-12;
  return {ok, fmt("scales 1..0.001: max relative deviation %.2g from 1e-6 / 4e-3 / 4e-5", worst)};
}

Verdict negative_filter() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(0, 1);
  long positives_dropped = 0, monotone_breaks = 0, excluded_at_099 = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const int n = 512;
    std::vector<float> probs(n);
    std::vector<std::int8_t> labels(n);
    for (int i = 0; i < n; ++i) {
      probs[i] = 1.0f - 0.05f * std::pow(u(rng), 2.0f);
      const float r = u(rng);
      labels[i] = r < 0.2f ? facedet::kPositive : (r < 0.3f ? facedet::kIgnore : facedet::kNegative);
    }
    long prev = n + 1;
    for (double thr = 0.95; thr <= 1.0; thr += 0.0025) {
      const auto keep = facedet::negative_filter_mask(probs, labels, thr);
      long excluded = 0;
      for (int i = 0; i < n; ++i) {
        excluded += !keep[i];
        if (labels[i] == facedet::kPositive && !keep[i]) ++positives_dropped;
      }
      if (excluded > prev) ++monotone_breaks;
      prev = excluded;
    }
    const auto keep = facedet::negative_filter_mask(probs, labels, 0.99);
    for (int i = 0; i < n; ++i) {
      if (labels[i] == facedet::kPositive && !keep[i]) ++positives_dropped;
      excluded_at_099 += !keep[i];
    }
  }
  return {positives_dropped == 0 && monotone_breaks == 0 && excluded_at_099 > 0,
          fmt("positives excluded %.0f, monotonicity violations %.0f, negatives excluded at 0.99: %.0f",
              double(positives_dropped), double(monotone_breaks), double(excluded_at_099))};
}

facedet::SyntheticDataset overfit_dataset() {
  facedet::SyntheticSpec spec;
  spec.n_images = 8;
  spec.min_size = 16;
  spec.max_size = 96;
  spec.seed = 3;
  return facedet::generate_synthetic_dataset(scratch("overfit_data"), spec);
}

Verdict end_to_end_overfit() {
  const auto t0 = Clock::now();
  const auto ds = overfit_dataset();
  auto cfg = DetectorConfig::load(fs::path(FACEDET_CONFIG_DIR) / "overfit.ini");
  cfg.io.data_root = ds.root.string();
  const int iters = cfg.optim.scaled(cfg.optim.total_iters);
  if (iters > 2000) return {false, "overfit config schedules " + std::to_string(iters) + " iterations"};
  const auto data = facedet::load_dataset(ds.root, ds.annotations);
  facedet::TrainOptions opt;
  opt.output_dir = scratch("overfit_run");
  const auto result = facedet::train(data, cfg, opt);

  facedet::Detector det(cfg);
  det.load(result.final_checkpoint);
  facedet::DetectionFile dets;
  for (std::size_t i = 0; i < data.records.size(); ++i) dets[data.records[i].image_path] = det.detect(data.images[i]);
  facedet::SubsetLists lists{facedet::parse_subset_list(ds.subset_easy), facedet::parse_subset_list(ds.subset_medium),
                             facedet::parse_subset_list(ds.subset_hard)};
  const auto res = facedet::evaluate_subsets(dets, data.records, lists, cfg.eval.match_iou, cfg.eval.pr_thresholds);
  const double secs = seconds_since(t0);
  if (!res.easy) return {false, "easy subset has no faces"};
  const double first = result.log.front().report.total, last = result.log.back().report.total;
  return {res.easy->ap >= 0.9 && secs <= 600,
          fmt("%.0f iterations, easy AP %.4f (need >= 0.9), loss %.3f -> ", iters, res.easy->ap, first) +
              fmt("%.3f, %.1f s (limit 600)", last, secs)};
}

Verdict determinism() {
  const auto ds = overfit_dataset();
  const auto data = facedet::load_dataset(ds.root, ds.annotations);
  auto cfg = DetectorConfig::load(fs::path(FACEDET_CONFIG_DIR) / "desk.ini");
  cfg.io.data_root = ds.root.string();
  cfg.run.seed = 21;
  auto run = [&](const std::string& dir, std::optional<int> stop, bool resume) {
    facedet::TrainOptions opt;
    opt.output_dir = fs::temp_directory_path() / ("facedet_acceptance_" + dir);
    opt.stop_at = stop;
    opt.resume = resume;
    return facedet::train(data, cfg, opt).log;
  };
  auto text = [](const std::vector<facedet::IterationLog>& log) {
    std::string s;
    for (const auto& e : log) s += e.to_json().dump() + "\n";
    return s;
  };
  scratch("det_a");
  scratch("det_b");
  scratch("det_resume");
  const auto a = run("det_a", 50, false);
  const auto b = run("det_b", 50, false);
  const bool same = a.size() == 50 && text(a) == text(b);
  auto first = run("det_resume", 25, false);
  const auto second = run("det_resume", 50, true);
  first.insert(first.end(), second.begin(), second.end());
  const bool resumed = text(first) == text(a);
  return {same && resumed, std::string("two seeded 50-iteration logs identical: ") + (same ? "yes" : "no") +
                               "; 25 + resume 25 equals uninterrupted run: " + (resumed ? "yes" : "no")};
}

Verdict format_fidelity() {
  const auto recs = facedet::parse_wider_annotations(fs::path(FACEDET_TEST_DATA_DIR) / "wider_face_train_bbx_gt_head50.txt");
  facedet::SyntheticSpec spec;
  spec.n_images = 100;
  spec.max_faces = 8;
  spec.invalid_fraction = 0.1;
  spec.seed = 31;
  const auto synth = facedet::generate_synthetic_annotations(spec);
  std::ostringstream first;
  facedet::write_wider_annotations(first, synth);
  std::istringstream in(first.str());
  const auto parsed = facedet::parse_wider_annotations(in);
  std::ostringstream second;
  facedet::write_wider_annotations(second, parsed);
  const bool stable = parsed == synth && first.str() == second.str();
  return {recs.size() == 50 && stable, "fixture records " + std::to_string(recs.size()) +
                                           " (need 50); synthetic emit/parse/emit byte-stable: " +
                                           (stable ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"sampler mixture", mixture},
      {"BDAS uniformity", bdas_uniformity},
      {"balance direction", balance_direction},
      {"geometry oracles", geometry_oracles},
      {"encode/decode round trip", encode_decode},
      {"progressive anchor structure", progressive_anchors},
      {"dense context module", dense_context},
      {"gradient checks", gradient_checks},
      {"LR schedule", lr_schedule},
      {"negative filter", negative_filter},
      {"end-to-end overfit", end_to_end_overfit},
      {"determinism", determinism},
      {"format fidelity", format_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
