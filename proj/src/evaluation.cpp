// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace facedet {

std::vector<MatchOutcome> match_detections(std::span<const Detection> dets, std::span<const Box> gts,
                                           std::span<const std::uint8_t> ignore, double iou_threshold) {
  if (ignore.size() != gts.size()) throw std::invalid_argument("match_detections: ignore flags do not match boxes");
  std::vector<MatchOutcome> out(dets.size(), MatchOutcome::kFalsePositive);
  std::vector<char> taken(gts.size(), 0);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    double best = -1;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!ignore[g] && taken[g]) continue;
      const double v = iou(dets[d].box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt < 0 || best < iou_threshold) continue;
    if (ignore[best_gt]) {
      out[d] = MatchOutcome::kIgnored;
    } else {
      out[d] = MatchOutcome::kTruePositive;
      taken[best_gt] = 1;
    }
  }
  return out;
}

double average_precision(std::span<const double> precision, std::span<const double> recall) {
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0;
  for (std::size_t i = 0; i + 1 < mrec.size(); ++i)
    if (mrec[i + 1] != mrec[i]) ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
  return ap;
}

std::optional<PRCurve> pr_curve(std::vector<ScoredOutcome> outcomes, long long num_gt, int bins) {
  if (num_gt <= 0) return std::nullopt;
  std::stable_sort(outcomes.begin(), outcomes.end(),
                   [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score > b.score; });
  const std::size_t n = outcomes.size();
  std::vector<long long> tp(n + 1, 0), fp(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    tp[i + 1] = tp[i] + (outcomes[i].outcome == MatchOutcome::kTruePositive);
    fp[i + 1] = fp[i] + (outcomes[i].outcome == MatchOutcome::kFalsePositive);
  }
  PRCurve c;
  c.num_gt = num_gt;
  for (int i = 1; i <= bins; ++i) {
    std::size_t k = static_cast<std::size_t>((static_cast<long long>(i) * static_cast<long long>(n) + bins - 1) / bins);
    while (k > 0 && k < n && outcomes[k].score == outcomes[k - 1].score) ++k;
    const long long counted = tp[k] + fp[k];
    c.thresholds.push_back(k > 0 ? outcomes[k - 1].score : 1.0);
    c.precision.push_back(counted > 0 ? double(tp[k]) / double(counted) : 0.0);
    c.recall.push_back(double(tp[k]) / double(num_gt));
  }
  c.ap = average_precision(c.precision, c.recall);
  return c;
}

void write_detection_file(std::ostream& out, const DetectionFile& dets) {
  out << std::setprecision(9);
  for (const auto& [name, list] : dets) {
    out << name << '\n' << list.size() << '\n';
    for (const auto& d : list)
      out << d.box.x_min << ' ' << d.box.y_min << ' ' << d.box.width() << ' ' << d.box.height() << ' ' << d.score
          << '\n';
  }
}

void write_detection_file(const std::filesystem::path& path, const DetectionFile& dets) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write detection file '" + path.string() + "'");
  write_detection_file(out, dets);
}

DetectionFile read_detection_file(std::istream& in) {
  DetectionFile dets;
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](std::string& s) {
    while (std::getline(in, s)) {
      ++line_no;
      if (!s.empty() && s.back() == '\r') s.pop_back();
      if (!s.empty()) return true;
    }
    return false;
  };
  while (next(line)) {
    const std::string name = line;
    std::string count_line;
    if (!next(count_line)) throw FormatError("missing detection count for '" + name + "'", line_no + 1);
    long long count = -1;
    std::istringstream cs(count_line);
    std::string rest;
    if (!(cs >> count) || (cs >> rest) || count < 0)
      throw FormatError("malformed detection count '" + count_line + "'", line_no);
    auto& list = dets[name];
    for (long long i = 0; i < count; ++i) {
      std::string row;
      if (!next(row)) throw FormatError("expected " + std::to_string(count) + " detections for '" + name + "'", line_no + 1);
      std::istringstream rs(row);
      double x, y, w, h, s;
      if (!(rs >> x >> y >> w >> h >> s) || (rs >> rest) || !std::isfinite(s))
        throw FormatError("malformed detection '" + row + "'", line_no);
      list.push_back({Box::from_xywh(x, y, w, h), s});
    }
  }
  return dets;
}

DetectionFile read_detection_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read detection file '" + path.string() + "'");
  return read_detection_file(in);
}

namespace {

std::optional<PRCurve> evaluate_subset(const DetectionFile& dets, const std::vector<AnnotationRecord>& records,
                                       const SubsetList& subset, double iou_threshold, int bins) {
  std::vector<ScoredOutcome> pooled;
  long long num_gt = 0;
  for (const auto& rec : records) {
    const auto member = subset.find(rec.image_path);
    std::vector<Box> gts;
    std::vector<std::uint8_t> ignore;
    for (std::size_t k = 0; k < rec.faces.size(); ++k) {
      const bool in_subset = member != subset.end() && member->second.count(static_cast<int>(k)) > 0;
      const bool counted = in_subset && !rec.faces[k].attributes.invalid;
      gts.push_back(rec.faces[k].box());
      ignore.push_back(counted ? 0 : 1);
      num_gt += counted;
    }
    const auto found = dets.find(rec.image_path);
    if (found == dets.end()) continue;
    std::vector<Detection> sorted = found->second;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    const auto outcomes = match_detections(sorted, gts, ignore, iou_threshold);
    for (std::size_t i = 0; i < sorted.size(); ++i) pooled.push_back({sorted[i].score, outcomes[i]});
  }
  return pr_curve(std::move(pooled), num_gt, bins);
}

nlohmann::json curve_json(const PRCurve& c) {
  return {{"ap", c.ap}, {"num_gt", c.num_gt}, {"thresholds", c.thresholds}, {"precision", c.precision},
          {"recall", c.recall}};
}

}  // namespace

SubsetResults evaluate_subsets(const DetectionFile& dets, const std::vector<AnnotationRecord>& records,
                               const SubsetLists& subsets, double iou_threshold, int bins) {
  SubsetResults r;
  for (const auto& rec : records)
    if (!dets.count(rec.image_path)) r.warnings.push_back("no detections for image '" + rec.image_path + "'");
  if (subsets.easy) r.easy = evaluate_subset(dets, records, *subsets.easy, iou_threshold, bins);
  if (subsets.medium) r.medium = evaluate_subset(dets, records, *subsets.medium, iou_threshold, bins);
  if (subsets.hard) r.hard = evaluate_subset(dets, records, *subsets.hard, iou_threshold, bins);
  return r;
}

nlohmann::json metrics_json(const SubsetResults& results) {
  nlohmann::json j;
  nlohmann::json curves = nlohmann::json::object();
  for (const auto& [name, curve] : {std::pair{"easy", &results.easy}, std::pair{"medium", &results.medium},
                                    std::pair{"hard", &results.hard}}) {
    if (*curve) {
      j[name] = (*curve)->ap;
      curves[name] = curve_json(**curve);
    } else {
      j[name] = nullptr;
    }
  }
  j["curves"] = curves;
  j["warnings"] = results.warnings;
  return j;
}

std::vector<std::pair<std::string, PRCurve>> curves_from_metrics(const nlohmann::json& metrics) {
  std::vector<std::pair<std::string, PRCurve>> out;
  const auto& curves = metrics.at("curves");
  for (const char* name : {"easy", "medium", "hard"}) {
    if (!curves.contains(name)) continue;
    const auto& c = curves.at(name);
    PRCurve p;
    p.ap = c.at("ap").get<double>();
    p.num_gt = c.value("num_gt", 0LL);
    p.thresholds = c.value("thresholds", std::vector<double>{});
    p.precision = c.at("precision").get<std::vector<double>>();
    p.recall = c.at("recall").get<std::vector<double>>();
    out.emplace_back(name, std::move(p));
  }
  return out;
}

void emit_pr_plot(const std::vector<std::pair<std::string, PRCurve>>& curves, const std::filesystem::path& path) {
  if (curves.empty()) throw std::invalid_argument("emit_pr_plot: no curves");
  constexpr int kPanel = 320;
  constexpr int kMargin = 48;
  const int width = static_cast<int>(curves.size()) * (kPanel + kMargin) + kMargin;
  const int height = kPanel + 2 * kMargin;
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < curves.size(); ++p) {
    const auto& [name, c] = curves[p];
    const double x0 = kMargin + double(p) * (kPanel + kMargin);
    const double y0 = kMargin;
    auto px = [&](double r) { return x0 + r * kPanel; };
    auto py = [&](double v) { return y0 + (1.0 - v) * kPanel; };
    svg << "<g class=\"panel\" id=\"" << name << "\">\n";
    svg << "<text x=\"" << px(0.5) << "\" y=\"" << y0 - 16 << "\" text-anchor=\"middle\" font-size=\"14\">" << name
        << "</text>\n";
    svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanel << "\" height=\"" << kPanel
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 10; t += 2) {
      const double v = t / 10.0;
      svg << "<text x=\"" << px(v) << "\" y=\"" << y0 + kPanel + 14 << "\" text-anchor=\"middle\">" << v << "</text>\n";
      svg << "<text x=\"" << x0 - 4 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
    }
    svg << "<text x=\"" << px(0.5) << "\" y=\"" << y0 + kPanel + 32 << "\" text-anchor=\"middle\">Recall</text>\n";
    svg << "<text x=\"" << x0 - 34 << "\" y=\"" << py(0.5) << "\" transform=\"rotate(-90 " << x0 - 34 << ' '
        << py(0.5) << ")\" text-anchor=\"middle\">Precision</text>\n";
    svg << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.recall.size(); ++i) svg << px(c.recall[i]) << ',' << py(c.precision[i]) << ' ';
    svg << "\"/>\n";
    std::ostringstream legend;
    legend << std::fixed << std::setprecision(3) << "facedet-" << c.ap;
    svg << "<text class=\"legend\" x=\"" << px(0.05) << "\" y=\"" << py(0.05) << "\">" << legend.str() << "</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot '" + path.string() + "'");
  out << svg.str();
  if (!out) throw std::runtime_error("cannot write plot '" + path.string() + "'");
}

}  // namespace facedet
