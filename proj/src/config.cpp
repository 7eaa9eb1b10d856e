// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace facedet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_value(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
template <typename T>
std::string format_value(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_value(v[i]);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("invalid value '" + s + "' for config key '" + key + "'");
  return v;
}

void parse_value(const std::string& key, const std::string& raw, double& out) {
  out = parse_number<double>(key, raw);
}
void parse_value(const std::string& key, const std::string& raw, int& out) {
  out = parse_number<int>(key, raw);
}
void parse_value(const std::string& key, const std::string& raw, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, raw);
}
void parse_value(const std::string& key, const std::string& raw, bool& out) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    out = true;
  } else if (s == "false" || s == "0" || s == "no" || s == "off") {
    out = false;
  } else {
    throw ConfigError("invalid boolean '" + s + "' for config key '" + key + "'");
  }
}
void parse_value(const std::string&, const std::string& raw, std::string& out) { out = trim(raw); }
template <typename T>
void parse_value(const std::string& key, const std::string& raw, std::vector<T>& out) {
  out.clear();
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    T v{};
    parse_value(key, item, v);
    out.push_back(v);
  }
}

struct Field {
  std::string name;
  std::function<std::string(const DetectorConfig&)> get;
  std::function<void(DetectorConfig&, const std::string&)> set;
};

template <typename Accessor>
Field make_field(std::string name, Accessor access) {
  Field f;
  f.name = name;
  f.get = [access](const DetectorConfig& c) {
    return format_value(access(const_cast<DetectorConfig&>(c)));
  };
  f.set = [access, name](DetectorConfig& c, const std::string& raw) {
    parse_value(name, raw, access(c));
  };
  return f;
}

#define FACEDET_FIELD(section, key) \
  make_field(#section "." #key, [](DetectorConfig& c) -> auto& { return c.section.key; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FACEDET_FIELD(sampler, enabled),
      FACEDET_FIELD(sampler, anchor_sizes),
      FACEDET_FIELD(sampler, bdas_probability),
      FACEDET_FIELD(sampler, crop_size),
      FACEDET_FIELD(sampler, size_interval_lo),
      FACEDET_FIELD(sampler, size_interval_hi),
      FACEDET_FIELD(sampler, bdas_index_cap),
      FACEDET_FIELD(sampler, ssd_max_trials),
      FACEDET_FIELD(sampler, color_distort_probability),
      FACEDET_FIELD(sampler, hflip_probability),
      FACEDET_FIELD(sampler, brightness_delta),
      FACEDET_FIELD(sampler, contrast_lo),
      FACEDET_FIELD(sampler, contrast_hi),
      FACEDET_FIELD(sampler, saturation_lo),
      FACEDET_FIELD(sampler, saturation_hi),
      FACEDET_FIELD(sampler, hue_delta),
      FACEDET_FIELD(anchors, sizes),
      FACEDET_FIELD(anchors, strides),
      FACEDET_FIELD(anchors, context_ratios),
      FACEDET_FIELD(anchors, primary_iou),
      FACEDET_FIELD(anchors, compensate_iou),
      FACEDET_FIELD(anchors, compensate_top_n),
      FACEDET_FIELD(anchors, ignore_iou),
      FACEDET_FIELD(anchors, variance_center),
      FACEDET_FIELD(anchors, variance_size),
      FACEDET_FIELD(anchors, first_shot_context),
      FACEDET_FIELD(network, backbone),
      FACEDET_FIELD(network, backbone_channels),
      FACEDET_FIELD(network, lfpn_levels),
      FACEDET_FIELD(network, lfpn_channels),
      FACEDET_FIELD(network, dense_stages),
      FACEDET_FIELD(network, dense_growth),
      FACEDET_FIELD(network, dense_projection),
      FACEDET_FIELD(network, anchor_free_level),
      FACEDET_FIELD(network, anchor_free_shrink),
      FACEDET_FIELD(network, anchor_free_distance_scale),
      FACEDET_FIELD(network, input_mean),
      FACEDET_FIELD(network, input_std),
      FACEDET_FIELD(losses, first_shot_weight),
      FACEDET_FIELD(losses, regression_weight),
      FACEDET_FIELD(losses, segmentation_weight),
      FACEDET_FIELD(losses, anchor_free_weight),
      FACEDET_FIELD(losses, branch_weights),
      FACEDET_FIELD(losses, mining_ratio),
      FACEDET_FIELD(losses, negative_filter_threshold),
      FACEDET_FIELD(optim, momentum),
      FACEDET_FIELD(optim, weight_decay),
      FACEDET_FIELD(optim, warmup_iters),
      FACEDET_FIELD(optim, lr_start),
      FACEDET_FIELD(optim, lr_peak),
      FACEDET_FIELD(optim, decay_iters),
      FACEDET_FIELD(optim, decay_factor),
      FACEDET_FIELD(optim, total_iters),
      FACEDET_FIELD(optim, batch_size),
      FACEDET_FIELD(optim, scale),
      FACEDET_FIELD(optim, checkpoint_every),
      FACEDET_FIELD(optim, log_every),
      FACEDET_FIELD(eval, score_threshold),
      FACEDET_FIELD(eval, nms_iou),
      FACEDET_FIELD(eval, max_detections),
      FACEDET_FIELD(eval, match_iou),
      FACEDET_FIELD(eval, pr_thresholds),
      FACEDET_FIELD(io, data_root),
      FACEDET_FIELD(io, annotations),
      FACEDET_FIELD(io, subset_easy),
      FACEDET_FIELD(io, subset_medium),
      FACEDET_FIELD(io, subset_hard),
      FACEDET_FIELD(io, output_dir),
      FACEDET_FIELD(run, seed),
      FACEDET_FIELD(run, workers),
      FACEDET_FIELD(run, deterministic),
  };
  return table;
}

#undef FACEDET_FIELD

const Field& find_field(const std::string& dotted) {
  for (const auto& f : fields())
    if (f.name == dotted) return f;
  throw ConfigError("unknown config key '" + dotted + "'");
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError("invalid config: " + what);
}

}  // namespace

int OptimConfig::scaled(int iters) const {
  return static_cast<int>(std::lround(static_cast<double>(iters) * scale));
}

DetectorConfig DetectorConfig::desk_scale() {
  DetectorConfig c;
  c.sampler.crop_size = 160;
  c.sampler.anchor_sizes = {4, 8, 16, 32, 64, 128};
  c.anchors.sizes = {4, 8, 16, 32, 64, 128};
  c.anchors.strides = {2, 4, 8, 16, 32, 64};
  c.network.backbone_channels = {16, 24, 32, 48, 48, 48};
  c.network.lfpn_channels = 16;
  c.network.dense_stages = 4;
  c.network.dense_growth = 8;
  c.network.dense_projection = 16;
  c.network.anchor_free_distance_scale = 8.0;
  c.optim.batch_size = 4;
  c.optim.scale = 0.01;
  c.optim.checkpoint_every = 200;
  return c;
}

DetectorConfig DetectorConfig::parse(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  DetectorConfig cfg;
  for (const auto& [section, children] : tree) {
    if (children.empty())
      throw ConfigError("unknown config key '" + section + "' (keys must live in a [section])");
    for (const auto& [key, value] : children) {
      const std::string dotted = section + "." + key;
      find_field(dotted).set(cfg, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

DetectorConfig DetectorConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string DetectorConfig::dump() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const std::string sec = f.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += f.name.substr(dot + 1) + " = " + f.get(*this) + "\n";
  }
  return out;
}

void DetectorConfig::set(const std::string& dotted_key, const std::string& value) {
  find_field(dotted_key).set(*this, value);
}

void DetectorConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    set(trim(a.substr(0, eq)), a.substr(eq + 1));
  }
  validate();
}

void DetectorConfig::validate() const {
  const auto& s = sampler;
  require(!s.anchor_sizes.empty(), "sampler.anchor_sizes is empty");
  for (std::size_t i = 1; i < s.anchor_sizes.size(); ++i)
    require(s.anchor_sizes[i] > s.anchor_sizes[i - 1], "sampler.anchor_sizes must be strictly increasing");
  require(s.anchor_sizes.front() > 0, "sampler.anchor_sizes must be positive");
  require(s.bdas_probability >= 0 && s.bdas_probability <= 1, "sampler.bdas_probability outside [0,1]");
  require(s.size_interval_lo > 0 && s.size_interval_lo < s.size_interval_hi,
          "sampler.size_interval_lo must be in (0, size_interval_hi)");
  require(s.crop_size > 0, "sampler.crop_size must be positive");
  require(s.ssd_max_trials > 0, "sampler.ssd_max_trials must be positive");
  require(s.color_distort_probability >= 0 && s.color_distort_probability <= 1,
          "sampler.color_distort_probability outside [0,1]");
  require(s.hflip_probability >= 0 && s.hflip_probability <= 1, "sampler.hflip_probability outside [0,1]");

  const auto& a = anchors;
  require(!a.strides.empty(), "anchors.strides is empty");
  require(a.sizes.size() == a.strides.size(), "anchors.sizes and anchors.strides differ in length");
  for (std::size_t i = 1; i < a.strides.size(); ++i) {
    require(a.strides[i] == 2 * a.strides[i - 1], "anchors.strides must double per level");
    require(a.sizes[i] > a.sizes[i - 1], "anchors.sizes must be strictly increasing");
  }
  require(a.strides.front() > 0 && a.sizes.front() > 0, "anchors.strides/sizes must be positive");
  require(!a.context_ratios.empty() && a.context_ratios.front() == 1.0,
          "anchors.context_ratios must start with the face ratio 1");
  for (double r : a.context_ratios) require(r >= 1.0, "anchors.context_ratios must be >= 1");
  require(a.compensate_iou < a.primary_iou, "anchors.compensate_iou must be < anchors.primary_iou");
  require(a.compensate_top_n >= 0, "anchors.compensate_top_n must be >= 0");
  require(a.variance_center > 0 && a.variance_size > 0, "anchor variances must be positive");
  require(s.crop_size % a.strides.front() == 0, "sampler.crop_size must be divisible by the first stride");

  const auto& n = network;
  require(n.backbone_channels.size() == a.strides.size(),
          "network.backbone_channels must have one entry per level");
  for (int c : n.backbone_channels) require(c > 0, "network.backbone_channels must be positive");
  require(n.lfpn_levels >= 0 && n.lfpn_levels < static_cast<int>(a.strides.size()),
          "network.lfpn_levels must be < number of levels");
  require(n.lfpn_channels > 0 && n.dense_growth > 0 && n.dense_projection > 0,
          "network channel counts must be positive");
  require(n.dense_stages >= 2, "network.dense_stages must be >= 2");
  require(n.anchor_free_level >= 0 && n.anchor_free_level < static_cast<int>(a.strides.size()),
          "network.anchor_free_level out of range");
  require(n.anchor_free_shrink > 0 && n.anchor_free_shrink <= 1, "network.anchor_free_shrink outside (0,1]");
  require(n.input_mean.size() == 3 && n.input_std.size() == 3, "network.input_mean/std need 3 values");
  for (double v : n.input_std) require(v > 0, "network.input_std must be positive");

  const auto& l = losses;
  require(l.first_shot_weight >= 0 && l.regression_weight >= 0 && l.segmentation_weight >= 0 &&
              l.anchor_free_weight >= 0 && l.mining_ratio >= 0,
          "loss weights must be non-negative");
  require(l.branch_weights.size() == a.context_ratios.size(),
          "losses.branch_weights must have one entry per context ratio");
  for (double w : l.branch_weights) require(w >= 0, "losses.branch_weights must be non-negative");
  require(l.negative_filter_threshold >= 0 && l.negative_filter_threshold <= 1,
          "losses.negative_filter_threshold outside [0,1]");

  const auto& o = optim;
  require(o.lr_start < o.lr_peak, "optim.lr_start must be < optim.lr_peak");
  require(o.warmup_iters >= 0 && o.total_iters > 0, "optim iteration counts must be positive");
  for (std::size_t i = 0; i < o.decay_iters.size(); ++i) {
    if (i) require(o.decay_iters[i] > o.decay_iters[i - 1], "optim.decay_iters must be strictly increasing");
    require(o.decay_iters[i] < o.total_iters, "optim.decay_iters must be < optim.total_iters");
  }
  require(o.scale > 0, "optim.scale must be positive");
  require(o.batch_size > 0, "optim.batch_size must be positive");
  require(o.momentum >= 0 && o.momentum < 1, "optim.momentum outside [0,1)");
  require(o.weight_decay >= 0, "optim.weight_decay must be non-negative");

  require(eval.pr_thresholds > 0, "eval.pr_thresholds must be positive");
  require(eval.max_detections > 0, "eval.max_detections must be positive");
  require(run.workers > 0, "run.workers must be positive");
}

std::uint64_t DetectorConfig::model_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& f : fields()) {
    if (f.name.rfind("anchors.", 0) != 0 && f.name.rfind("network.", 0) != 0 &&
        f.name != "sampler.crop_size")
      continue;
    const std::string line = f.name + "=" + f.get(*this) + "\n";
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string DetectorConfig::model_hash_hex() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << model_hash();
  return os.str();
}

}  // namespace facedet
