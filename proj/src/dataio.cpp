// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/dataio.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace facedet {
namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct LineReader {
  std::istream& in;
  std::size_t line_no = 0;

  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++line_no;
      line = strip(line);
      if (!line.empty()) return true;
    }
    return false;
  }
};

int parse_count(const std::string& line, std::size_t line_no) {
  std::istringstream ss(line);
  long long n = -1;
  std::string rest;
  if (!(ss >> n) || (ss >> rest) || n < 0) throw FormatError("malformed face count '" + line + "'", line_no);
  return static_cast<int>(n);
}

std::vector<long long> parse_ints(const std::string& line) {
  std::istringstream ss(line);
  std::vector<long long> v;
  std::string tok;
  while (ss >> tok) {
    std::size_t used = 0;
    long long x = 0;
    try {
      x = std::stoll(tok, &used);
    } catch (const std::exception&) {
      return {};
    }
    if (used != tok.size()) return {};
    v.push_back(x);
  }
  return v;
}

void check_range(long long v, long long lo, long long hi, const char* name, std::size_t line_no) {
  if (v < lo || v > hi)
    throw FormatError(std::string("attribute '") + name + "' out of range: " + std::to_string(v), line_no);
}

}  // namespace

std::vector<AnnotationRecord> parse_wider_annotations(std::istream& in) {
  std::vector<AnnotationRecord> records;
  LineReader reader{in};
  std::string line;
  while (reader.next(line)) {
    AnnotationRecord rec;
    rec.image_path = line;
    if (!reader.next(line))
      throw FormatError("missing face count for '" + rec.image_path + "'", reader.line_no + 1);
    const int count = parse_count(line, reader.line_no);
    const int rows = std::max(count, 1);
    for (int i = 0; i < rows; ++i) {
      if (!reader.next(line))
        throw FormatError("truncated record for '" + rec.image_path + "'", reader.line_no + 1);
      const auto v = parse_ints(line);
      if (v.size() != 10) throw FormatError("expected 10 integers, got '" + line + "'", reader.line_no);
      if (count == 0) break;
      if (v[2] < 0 || v[3] < 0) throw FormatError("negative box size", reader.line_no);
      AnnotatedFace f;
      f.x = static_cast<int>(v[0]);
      f.y = static_cast<int>(v[1]);
      f.w = static_cast<int>(v[2]);
      f.h = static_cast<int>(v[3]);
      check_range(v[4], 0, 2, "blur", reader.line_no);
      check_range(v[5], 0, 1, "expression", reader.line_no);
      check_range(v[6], 0, 1, "illumination", reader.line_no);
      check_range(v[7], 0, 1, "invalid", reader.line_no);
      check_range(v[8], 0, 2, "occlusion", reader.line_no);
      check_range(v[9], 0, 1, "pose", reader.line_no);
      f.attributes = {static_cast<int>(v[4]), static_cast<int>(v[5]), static_cast<int>(v[6]),
                      static_cast<int>(v[7]), static_cast<int>(v[8]), static_cast<int>(v[9])};
      rec.faces.push_back(f);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<AnnotationRecord> parse_wider_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file '" + path.string() + "'");
  return parse_wider_annotations(in);
}

void write_wider_annotations(std::ostream& out, const std::vector<AnnotationRecord>& records) {
  for (const auto& rec : records) {
    out << rec.image_path << '\n' << rec.faces.size() << '\n';
    if (rec.faces.empty()) out << "0 0 0 0 0 0 0 0 0 0 \n";
    for (const auto& f : rec.faces) {
      const auto& a = f.attributes;
      out << f.x << ' ' << f.y << ' ' << f.w << ' ' << f.h << ' ' << a.blur << ' ' << a.expression << ' '
          << a.illumination << ' ' << a.invalid << ' ' << a.occlusion << ' ' << a.pose << " \n";
    }
  }
}

void write_wider_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write annotation file '" + path.string() + "'");
  write_wider_annotations(out, records);
}

SubsetList parse_subset_list(std::istream& in) {
  SubsetList subset;
  std::size_t line_no = 0;
  std::string line;
  auto next = [&](std::string& l) {
    if (!std::getline(in, l)) return false;
    ++line_no;
    l = strip(l);
    return true;
  };
  while (next(line)) {
    if (line.empty()) continue;
    const std::string path = line;
    if (!next(line)) throw FormatError("missing count for '" + path + "'", line_no + 1);
    const int count = parse_count(line, line_no);
    std::set<int> indices;
    if (!next(line) && count > 0) throw FormatError("missing index line for '" + path + "'", line_no + 1);
    const auto v = parse_ints(line);
    if (static_cast<int>(v.size()) != count)
      throw FormatError("expected " + std::to_string(count) + " indices", line_no);
    for (long long idx : v) {
      if (idx < 1) throw FormatError("face indices are 1-based", line_no);
      indices.insert(static_cast<int>(idx - 1));
    }
    subset[path] = std::move(indices);
  }
  return subset;
}

SubsetList parse_subset_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open subset list '" + path.string() + "'");
  return parse_subset_list(in);
}

void write_subset_list(std::ostream& out, const SubsetList& subset) {
  for (const auto& [path, indices] : subset) {
    out << path << '\n' << indices.size() << '\n';
    bool first = true;
    for (int idx : indices) {
      out << (first ? "" : " ") << idx + 1;
      first = false;
    }
    out << '\n';
  }
}

std::vector<AnnotationRecord> generate_synthetic_annotations(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> n_faces(spec.min_faces, std::max(spec.min_faces, spec.max_faces));
  const double log_lo = std::log(spec.min_size);
  const double log_hi = std::log(spec.max_size);
  const double max_side = std::min(spec.image_width, spec.image_height) - 2.0;

  std::vector<AnnotationRecord> records;
  records.reserve(spec.n_images);
  for (int i = 0; i < spec.n_images; ++i) {
    AnnotationRecord rec;
    std::ostringstream name;
    name << "synthetic/img_" << std::setw(5) << std::setfill('0') << i << ".png";
    rec.image_path = name.str();
    const int want = n_faces(rng);
    for (int attempt = 0; attempt < 50 * want && static_cast<int>(rec.faces.size()) < want; ++attempt) {
      const double size = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
      const double aspect = 0.8 + 0.4 * unit(rng);  // width / height
      const int w = std::clamp(static_cast<int>(std::lround(size * std::sqrt(aspect))), 1,
                               static_cast<int>(max_side));
      const int h = std::clamp(static_cast<int>(std::lround(size / std::sqrt(aspect))), 1,
                               static_cast<int>(max_side));
      const int x = 1 + static_cast<int>(unit(rng) * (spec.image_width - 2 - w));
      const int y = 1 + static_cast<int>(unit(rng) * (spec.image_height - 2 - h));
      AnnotatedFace f{x, y, w, h, {}};
      const bool overlaps = std::any_of(rec.faces.begin(), rec.faces.end(), [&](const AnnotatedFace& o) {
        return intersection_area(o.box(), f.box()) > 0;
      });
      if (overlaps) continue;
      if (unit(rng) < spec.invalid_fraction) f.attributes.invalid = 1;
      rec.faces.push_back(f);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

cv::Mat render_synthetic_image(const AnnotationRecord& record, int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  cv::Mat noise(height, width, CV_8UC3);
  std::uniform_int_distribution<int> pix(50, 150);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      auto& px = noise.at<cv::Vec3b>(r, c);
      const int base = pix(rng);
      px = cv::Vec3b(static_cast<uchar>(base), static_cast<uchar>(std::clamp(base + 10, 0, 255)),
                     static_cast<uchar>(std::clamp(base - 10, 0, 255)));
    }
  cv::Mat image;
  cv::GaussianBlur(noise, image, cv::Size(5, 5), 1.5);

  for (const auto& f : record.faces) {
    const cv::Point center(f.x + f.w / 2, f.y + f.h / 2);
    const cv::Size axes(std::max(1, f.w / 2), std::max(1, f.h / 2));
    cv::ellipse(image, center, axes, 0, 0, 360, cv::Scalar(150, 200, 245), cv::FILLED, cv::LINE_8);
    if (f.w >= 6 && f.h >= 6) {
      const int r = std::max(1, f.w / 10);
      cv::circle(image, cv::Point(f.x + f.w * 3 / 10, f.y + f.h * 4 / 10), r, cv::Scalar(30, 30, 30), cv::FILLED);
      cv::circle(image, cv::Point(f.x + f.w * 7 / 10, f.y + f.h * 4 / 10), r, cv::Scalar(30, 30, 30), cv::FILLED);
      cv::line(image, cv::Point(f.x + f.w * 3 / 10, f.y + f.h * 3 / 4), cv::Point(f.x + f.w * 7 / 10, f.y + f.h * 3 / 4),
               cv::Scalar(40, 40, 160), std::max(1, f.h / 16));
    }
  }
  return image;
}

SyntheticDataset generate_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec) {
  namespace fs = std::filesystem;
  SyntheticDataset ds;
  ds.root = root;
  ds.records = generate_synthetic_annotations(spec);
  fs::create_directories(root / "images" / "synthetic");
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const cv::Mat img = render_synthetic_image(ds.records[i], spec.image_width, spec.image_height, spec.seed + 7919 * (i + 1));
    const fs::path out = image_path(root, ds.records[i]);
    if (!cv::imwrite(out.string(), img)) throw std::runtime_error("cannot write image '" + out.string() + "'");
  }
  ds.annotations = root / "annotations.txt";
  write_wider_annotations(ds.annotations, ds.records);

  SubsetList easy, medium, hard;
  for (const auto& rec : ds.records) {
    auto& e = easy[rec.image_path];
    auto& m = medium[rec.image_path];
    auto& h = hard[rec.image_path];
    for (std::size_t k = 0; k < rec.faces.size(); ++k) {
      const auto& f = rec.faces[k];
      if (f.attributes.invalid) continue;
      const double size = f.box().size();
      if (size >= 32) e.insert(static_cast<int>(k));
      if (size >= 16) m.insert(static_cast<int>(k));
      h.insert(static_cast<int>(k));
    }
  }
  auto write = [&](const fs::path& p, const SubsetList& s) {
    std::ofstream out(p, std::ios::binary);
    write_subset_list(out, s);
  };
  ds.subset_easy = root / "subset_easy.txt";
  ds.subset_medium = root / "subset_medium.txt";
  ds.subset_hard = root / "subset_hard.txt";
  write(ds.subset_easy, easy);
  write(ds.subset_medium, medium);
  write(ds.subset_hard, hard);
  return ds;
}

cv::Mat load_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("cannot read image '" + path.string() + "'");
  return img;
}

std::filesystem::path image_path(const std::filesystem::path& root, const AnnotationRecord& record) {
  return root / "images" / record.image_path;
}

Dataset load_dataset(const std::filesystem::path& root, const std::filesystem::path& annotations) {
  Dataset ds;
  ds.records = parse_wider_annotations(annotations);
  ds.images.reserve(ds.records.size());
  for (const auto& rec : ds.records) ds.images.push_back(load_image(image_path(root, rec)));
  return ds;
}

}  // namespace facedet
