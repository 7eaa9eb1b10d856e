// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/sampling.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

namespace facedet {
namespace {

constexpr std::array<double, 5> kSsdMinIous{0.1, 0.3, 0.5, 0.7, 0.9};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

int uniform_index(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

int target_index(double face_size, const SamplerConfig& cfg, Rng& rng) {
  const int last = static_cast<int>(cfg.anchor_sizes.size()) - 1;
  const int cap = cfg.bdas_index_cap ? std::min(last, nearest_anchor_index(face_size, cfg.anchor_sizes) + 1) : last;
  return uniform_index(rng, 0, cap);
}

}  // namespace

Sample make_sample(const cv::Mat& image, const AnnotationRecord& record) {
  Sample s;
  s.image = image;
  for (const auto& f : record.faces) {
    s.boxes.push_back(clip(f.box(), double(image.cols), double(image.rows)));
    s.attributes.push_back(f.attributes);
  }
  return s;
}

SamplingStrategy select_strategy(const SamplerConfig& cfg, Rng& rng) {
  return uniform(rng, 0.0, 1.0) < cfg.bdas_probability ? SamplingStrategy::kBalancedAnchor : SamplingStrategy::kSsd;
}

int nearest_anchor_index(double face_size, std::span<const double> anchor_sizes) {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < anchor_sizes.size(); ++i) {
    const double d = std::abs(anchor_sizes[i] - face_size);
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

TargetSizeDraw bdas_target_size(double face_size, const SamplerConfig& cfg, Rng& rng) {
  TargetSizeDraw draw;
  draw.anchor_index = target_index(face_size, cfg, rng);
  const double a = cfg.anchor_sizes[draw.anchor_index];
  draw.size = uniform(rng, a * cfg.size_interval_lo, a * cfg.size_interval_hi);
  return draw;
}

TargetSizeDraw das_target_size(double face_size, const SamplerConfig& cfg, Rng& rng) {
  TargetSizeDraw draw;
  const int last = static_cast<int>(cfg.anchor_sizes.size()) - 1;
  draw.anchor_index = uniform_index(rng, 0, std::min(last, nearest_anchor_index(face_size, cfg.anchor_sizes) + 1));
  const double a = cfg.anchor_sizes[draw.anchor_index];
  const double lo = a * cfg.size_interval_lo;
  const double hi = std::max(lo, std::min(a * cfg.size_interval_hi, 2.0 * face_size));
  draw.size = hi > lo ? uniform(rng, lo, hi) : lo;
  return draw;
}

Sample apply_crop(const Sample& sample, const Box& region, int crop_size) {
  const double sx = crop_size / region.width();
  const double sy = crop_size / region.height();
  const cv::Matx23d m(sx, 0, -region.x_min * sx, 0, sy, -region.y_min * sy);
  Sample out;
  if (!sample.image.empty())
    cv::warpAffine(sample.image, out.image, m, cv::Size(crop_size, crop_size), cv::INTER_LINEAR,
                   cv::BORDER_CONSTANT, cv::Scalar::all(0));
  const double c = crop_size;
  for (std::size_t i = 0; i < sample.boxes.size(); ++i) {
    const Box& b = sample.boxes[i];
    const Box t{(b.x_min - region.x_min) * sx, (b.y_min - region.y_min) * sy, (b.x_max - region.x_min) * sx,
                (b.y_max - region.y_min) * sy};
    const double cx = t.center_x();
    const double cy = t.center_y();
    if (cx < 0 || cx >= c || cy < 0 || cy >= c) continue;
    const Box clipped = clip(t, c, c);
    if (clipped.area() <= 0) continue;
    out.boxes.push_back(clipped);
    out.attributes.push_back(sample.attributes[i]);
  }
  return out;
}

Sample scale_and_crop(const Sample& sample, std::size_t selected, double target_size, const SamplerConfig& cfg,
                      Rng& rng) {
  const Box& face = sample.boxes.at(selected);
  if (!sample.is_valid_face(selected)) throw std::invalid_argument("scale_and_crop: selected face is not valid");
  const double scale = target_size / face.size();
  const double crop = cfg.crop_size;
  const double cx = face.center_x() * scale;
  const double cy = face.center_y() * scale;
  // Window origin uniform among windows whose interior holds the face center.
  const double x0 = uniform(rng, cx - crop, cx);
  const double y0 = uniform(rng, cy - crop, cy);
  const Box region{x0 / scale, y0 / scale, (x0 + crop) / scale, (y0 + crop) / scale};
  return apply_crop(sample, region, cfg.crop_size);
}

SsdCrop choose_ssd_crop(int width, int height, std::span<const Box> boxes, const SamplerConfig& cfg, Rng& rng) {
  SsdCrop whole;
  whole.region = Box{0, 0, double(width), double(height)};
  const int option = uniform_index(rng, 0, 6);
  if (option == 0 || boxes.empty()) return whole;

  const double min_iou = option <= 5 ? kSsdMinIous[option - 1] : 0.0;
  for (int trial = 0; trial < cfg.ssd_max_trials; ++trial) {
    const double scale = uniform(rng, 0.3, 1.0);
    const double aspect = uniform(rng, 0.5, 2.0);
    const double w = scale * std::sqrt(aspect);
    const double h = scale / std::sqrt(aspect);
    if (w > 1.0 || h > 1.0) continue;
    const double x = uniform(rng, 0.0, 1.0 - w);
    const double y = uniform(rng, 0.0, 1.0 - h);
    const Box region{x * width, y * height, (x + w) * width, (y + h) * height};

    bool has_center = false;
    bool satisfied = option == 6;
    for (const Box& b : boxes) {
      const double cx = b.center_x();
      const double cy = b.center_y();
      if (cx >= region.x_min && cx < region.x_max && cy >= region.y_min && cy < region.y_max) has_center = true;
      if (iou(region, b) >= min_iou) satisfied = true;
    }
    if (has_center && satisfied) return SsdCrop{region, false, min_iou, option};
  }
  return whole;
}

Sample ssd_sample(const Sample& sample, const SamplerConfig& cfg, Rng& rng, SsdCrop* chosen) {
  const SsdCrop crop = choose_ssd_crop(sample.image.cols, sample.image.rows, sample.boxes, cfg, rng);
  if (chosen) *chosen = crop;
  return apply_crop(sample, crop.region, cfg.crop_size);
}

Sample balanced_anchor_sample(const Sample& sample, const SamplerConfig& cfg, Rng& rng) {
  std::vector<std::size_t> selectable;
  for (std::size_t i = 0; i < sample.boxes.size(); ++i)
    if (sample.is_valid_face(i)) selectable.push_back(i);
  if (selectable.empty()) return ssd_sample(sample, cfg, rng);
  const std::size_t pick = selectable[uniform_index(rng, 0, static_cast<int>(selectable.size()) - 1)];
  const TargetSizeDraw draw = bdas_target_size(sample.boxes[pick].size(), cfg, rng);
  return scale_and_crop(sample, pick, draw.size, cfg, rng);
}

void color_distort(cv::Mat& image, const SamplerConfig& cfg, Rng& rng) {
  cv::Mat f;
  image.convertTo(f, CV_32FC3);
  if (uniform(rng, 0, 1) < 0.5) f += cv::Scalar::all(uniform(rng, -cfg.brightness_delta, cfg.brightness_delta));
  if (uniform(rng, 0, 1) < 0.5) f *= uniform(rng, cfg.contrast_lo, cfg.contrast_hi);
  const bool do_sat = uniform(rng, 0, 1) < 0.5;
  const double sat = uniform(rng, cfg.saturation_lo, cfg.saturation_hi);
  const bool do_hue = uniform(rng, 0, 1) < 0.5;
  const double hue = uniform(rng, -cfg.hue_delta, cfg.hue_delta);
  if (do_sat || do_hue) {
    cv::Mat clamped = cv::max(cv::min(f, 255.0), 0.0);
    cv::Mat hsv;
    cv::cvtColor(clamped / 255.0, hsv, cv::COLOR_BGR2HSV);  // H in [0,360)
    std::vector<cv::Mat> ch;
    cv::split(hsv, ch);
    if (do_sat) ch[1] = cv::min(ch[1] * sat, 1.0);
    if (do_hue) {
      ch[0] += hue;
      for (int r = 0; r < ch[0].rows; ++r) {
        float* p = ch[0].ptr<float>(r);
        for (int c = 0; c < ch[0].cols; ++c) p[c] = std::fmod(p[c] + 360.0f, 360.0f);
      }
    }
    cv::merge(ch, hsv);
    cv::cvtColor(hsv, f, cv::COLOR_HSV2BGR);
    f *= 255.0;
  }
  f.convertTo(image, CV_8UC3);  // saturating cast
}

void horizontal_flip(Sample& sample) {
  cv::Mat flipped;
  cv::flip(sample.image, flipped, 1);
  sample.image = flipped;
  for (auto& b : sample.boxes) b = hflip(b, double(sample.image.cols));
}

Sample resize_to_crop(const Sample& sample, int crop_size) {
  return apply_crop(sample, Box{0, 0, double(sample.image.cols), double(sample.image.rows)}, crop_size);
}

Sample augment(const Sample& sample, const SamplerConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return resize_to_crop(sample, cfg.crop_size);
  Sample out = select_strategy(cfg, rng) == SamplingStrategy::kBalancedAnchor ? balanced_anchor_sample(sample, cfg, rng)
                                                                               : ssd_sample(sample, cfg, rng);
  if (uniform(rng, 0, 1) < cfg.color_distort_probability) color_distort(out.image, cfg, rng);
  if (uniform(rng, 0, 1) < cfg.hflip_probability) horizontal_flip(out);
  return out;
}

SizeHistogram make_size_histogram() {
  SizeHistogram h;
  h.edges = {0, 8, 16, 32, 64, 128, 256, 512, 1024, std::numeric_limits<double>::infinity()};
  h.counts.assign(h.edges.size() - 1, 0);
  return h;
}

void SizeHistogram::add(double size) {
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    if (size >= edges[i] && size < edges[i + 1]) {
      ++counts[i];
      break;
    }
  }
  ++total;
  if (size >= 32.0 && size <= 128.0) ++in_32_128;
}

std::vector<CorpusImage> default_synthetic_corpus(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_images = 500;
  spec.image_width = 1024;
  spec.image_height = 768;
  spec.min_faces = 1;
  spec.max_faces = 10;
  spec.min_size = 6.0;
  spec.max_size = 384.0;
  spec.seed = seed;
  std::vector<CorpusImage> corpus;
  for (const auto& rec : generate_synthetic_annotations(spec)) {
    CorpusImage img{spec.image_width, spec.image_height, {}};
    for (const auto& f : rec.faces) img.faces.push_back(f.box());
    corpus.push_back(std::move(img));
  }
  return corpus;
}

SamplerStats sampler_statistics(std::span<const CorpusImage> corpus, const SamplerConfig& cfg, long long n_draws,
                                std::uint64_t seed) {
  SamplerStats stats;
  stats.bdas = make_size_histogram();
  stats.das = make_size_histogram();
  stats.ssd = make_size_histogram();
  stats.mixture = make_size_histogram();

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!corpus[i].faces.empty()) usable.push_back(i);
  if (usable.empty() || n_draws <= 0) return stats;
  stats.draws = n_draws;

  // Shared stream for which (image, face) is drawn; per-strategy streams for the rest.
  Rng pick_rng(seed);
  Rng bdas_rng(seed), das_rng(seed), ssd_rng(seed), mix_rng(seed);

  auto ssd_size = [&](const CorpusImage& img, std::size_t face, Rng& rng, double& out) {
    const SsdCrop crop = choose_ssd_crop(img.width, img.height, img.faces, cfg, rng);
    const Box& b = img.faces[face];
    const Box& r = crop.region;
    if (b.center_x() < r.x_min || b.center_x() >= r.x_max || b.center_y() < r.y_min || b.center_y() >= r.y_max)
      return false;
    out = b.size() * std::sqrt(cfg.crop_size / r.width() * cfg.crop_size / r.height());
    return true;
  };

  for (long long n = 0; n < n_draws; ++n) {
    const CorpusImage& img = corpus[usable[uniform_index(pick_rng, 0, static_cast<int>(usable.size()) - 1)]];
    const std::size_t face = uniform_index(pick_rng, 0, static_cast<int>(img.faces.size()) - 1);
    const double size = img.faces[face].size();

    stats.bdas.add(bdas_target_size(size, cfg, bdas_rng).size);
    stats.das.add(das_target_size(size, cfg, das_rng).size);
    double s = 0;
    if (ssd_size(img, face, ssd_rng, s)) stats.ssd.add(s);
    if (select_strategy(cfg, mix_rng) == SamplingStrategy::kBalancedAnchor) {
      ++stats.mixture_bdas_chosen;
      stats.mixture.add(bdas_target_size(size, cfg, mix_rng).size);
    } else if (ssd_size(img, face, mix_rng, s)) {
      stats.mixture.add(s);
    }
  }
  return stats;
}

namespace {

nlohmann::json histogram_json(const SizeHistogram& h) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    nlohmann::json hi = std::isinf(h.edges[i + 1]) ? nlohmann::json(nullptr) : nlohmann::json(h.edges[i + 1]);
    bins.push_back({{"lo", h.edges[i]}, {"hi", hi}, {"count", h.counts[i]}});
  }
  return {{"total", h.total}, {"mass_32_128", h.mass_32_128()}, {"bins", bins}};
}

}  // namespace

std::string format_stats_json(const SamplerStats& stats) {
  nlohmann::json j = {{"draws", stats.draws},
                      {"mixture_bdas_fraction",
                       stats.draws ? static_cast<double>(stats.mixture_bdas_chosen) / stats.draws : 0.0},
                      {"bdas", histogram_json(stats.bdas)},
                      {"das", histogram_json(stats.das)},
                      {"ssd", histogram_json(stats.ssd)},
                      {"mixture", histogram_json(stats.mixture)}};
  return j.dump(2);
}

std::string format_stats_text(const SamplerStats& stats) {
  std::ostringstream os;
  os << "draws: " << stats.draws << "\n";
  os << "mixture bdas fraction: " << (stats.draws ? static_cast<double>(stats.mixture_bdas_chosen) / stats.draws : 0.0)
     << "\n";
  const std::pair<const char*, const SizeHistogram*> rows[] = {
      {"bdas", &stats.bdas}, {"das", &stats.das}, {"ssd", &stats.ssd}, {"mixture", &stats.mixture}};
  for (const auto& [name, h] : rows) {
    os << name << "  [32,128] mass " << h->mass_32_128() << "\n";
    for (std::size_t i = 0; i < h->counts.size(); ++i) {
      const double frac = h->total ? static_cast<double>(h->counts[i]) / h->total : 0.0;
      os << "  [" << h->edges[i] << ", " << h->edges[i + 1] << ")\t" << h->counts[i] << "\t"
         << std::string(static_cast<std::size_t>(std::lround(frac * 50)), '#') << "\n";
    }
  }
  return os.str();
}

}  // namespace facedet
