// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "facedet/anchors.hpp"
#include "facedet/config.hpp"
#include "facedet/geometry.hpp"
#include "facedet/heads.hpp"
#include "facedet/nn.hpp"

namespace facedet {

template <typename Scalar>
struct FeatureMap {
  int level = 0;
  int stride = 1;
  Tensor<Scalar> values;
};

/// Produces one feature map per pyramid level.
template <typename Scalar>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::vector<FeatureMap<Scalar>> forward(const Tensor<Scalar>& image) = 0;
  /// `grads[l]` is d(loss)/d(level l output); returns nothing since the image
  /// is not learnable.
  virtual void backward(const std::vector<Tensor<Scalar>>& grads) = 0;
  virtual void collect(ParamList<Scalar>& out) = 0;
  virtual void init(std::mt19937_64& rng) = 0;
};

/// Strided 3x3 convolution stack: level l ends with stride strides[l].
/// Level 0 takes log2(strides[0]) stride-2 convolutions, every later level
/// one; each level finishes with a stride-1 convolution.
template <typename Scalar>
class PlainBackbone final : public Backbone<Scalar> {
 public:
  explicit PlainBackbone(const DetectorConfig& cfg) : image_size_(cfg.crop_size()), strides_(cfg.anchors.strides) {
    const auto& ch = cfg.network.backbone_channels;
    int in = 3;
    for (std::size_t l = 0; l < ch.size(); ++l) {
      std::vector<ConvReLU<Scalar>> stage;
      int downsamples = 1;
      if (l == 0) {
        downsamples = 0;
        for (int s = strides_[0]; s > 1; s /= 2) ++downsamples;
      }
      const std::string prefix = "backbone.stage" + std::to_string(l);
      for (int d = 0; d < downsamples; ++d) {
        stage.emplace_back(in, ch[l], 3, 2, prefix + ".down" + std::to_string(d));
        in = ch[l];
      }
      stage.emplace_back(in, ch[l], 3, 1, prefix + ".conv");
      in = ch[l];
      stages_.push_back(std::move(stage));
    }
  }

  std::vector<FeatureMap<Scalar>> forward(const Tensor<Scalar>& image) override {
    if (image.channels != 3 || image.rows != image_size_ || image.cols != image_size_)
      throw std::invalid_argument("backbone: expected a 3x" + std::to_string(image_size_) + "x" +
                                  std::to_string(image_size_) + " input, got " + std::to_string(image.channels) +
                                  "x" + std::to_string(image.rows) + "x" + std::to_string(image.cols));
    std::vector<FeatureMap<Scalar>> out;
    Tensor<Scalar> x = image;
    for (std::size_t l = 0; l < stages_.size(); ++l) {
      for (auto& layer : stages_[l]) x = layer.forward(x);
      out.push_back({static_cast<int>(l), strides_[l], x});
    }
    return out;
  }

  void backward(const std::vector<Tensor<Scalar>>& grads) override {
    Tensor<Scalar> carry;
    for (int l = static_cast<int>(stages_.size()) - 1; l >= 0; --l) {
      Tensor<Scalar> g = grads[l];
      if (carry.channels) g.data += carry.data;
      for (auto it = stages_[l].rbegin(); it != stages_[l].rend(); ++it) g = it->backward(g);
      carry = std::move(g);
    }
  }

  void collect(ParamList<Scalar>& out) override {
    for (auto& stage : stages_)
      for (auto& layer : stage) layer.collect(out);
  }

  void init(std::mt19937_64& rng) override {
    for (auto& stage : stages_)
      for (auto& layer : stage) layer.init(Init::kKaiming, rng);
  }

 private:
  int image_size_;
  std::vector<int> strides_;
  std::vector<std::vector<ConvReLU<Scalar>>> stages_;
};

/// Name -> factory. "plain" is built in; a ResNet-style backbone can be
/// registered under another name.
template <typename Scalar>
class BackboneRegistry {
 public:
  using Factory = std::function<std::unique_ptr<Backbone<Scalar>>(const DetectorConfig&)>;

  static BackboneRegistry& instance() {
    static BackboneRegistry registry;
    return registry;
  }
  void add(const std::string& name, Factory f) { factories_[name] = std::move(f); }
  std::unique_ptr<Backbone<Scalar>> create(const DetectorConfig& cfg) const {
    auto it = factories_.find(cfg.network.backbone);
    if (it == factories_.end()) throw ConfigError("unknown backbone '" + cfg.network.backbone + "'");
    return it->second(cfg);
  }

 private:
  BackboneRegistry() {
    add("plain", [](const DetectorConfig& c) { return std::make_unique<PlainBackbone<Scalar>>(c); });
  }
  std::map<std::string, Factory> factories_;
};

/// Low-level FPN fusion: the deeper map is projected (1x1), upsampled x2
/// (nearest) and multiplied element-wise with the projected shallower map.
template <typename Scalar>
class LfpnFuse {
 public:
  LfpnFuse() = default;
  LfpnFuse(int deep_channels, int shallow_channels, int out_channels, const std::string& name)
      : deep_proj_(deep_channels, out_channels, 1, 1, name + ".deep"),
        shallow_proj_(shallow_channels, out_channels, 1, 1, name + ".shallow") {}

  /// The deep projection starts near the constant 1, so the product starts
  /// near the projected shallow map.
  template <typename Rng>
  void init(Rng& rng) {
    deep_proj_.init(Init::kHead, rng);
    deep_proj_.bias().value.setOnes();
    shallow_proj_.init(Init::kXavier, rng);
  }
  void collect(ParamList<Scalar>& out) {
    deep_proj_.collect(out);
    shallow_proj_.collect(out);
  }
  Conv2d<Scalar>& deep_projection() { return deep_proj_; }
  Conv2d<Scalar>& shallow_projection() { return shallow_proj_; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& deep, const FeatureMap<Scalar>& shallow) {
    if (deep.level != shallow.level + 1)
      throw std::invalid_argument("lfpn_fuse: levels " + std::to_string(deep.level) + " and " +
                                  std::to_string(shallow.level) + " are not adjacent");
    const Tensor<Scalar> d = deep_proj_.forward(deep.values);
    deep_rows_ = d.rows;
    deep_cols_ = d.cols;
    up_ = upsample2x(d, shallow.values.rows, shallow.values.cols);
    projected_shallow_ = shallow_proj_.forward(shallow.values);
    FeatureMap<Scalar> out{shallow.level, shallow.stride, projected_shallow_};
    out.values.data = up_.data.cwiseProduct(projected_shallow_.data);
    return out;
  }

  /// Returns (d deep input, d shallow input).
  std::pair<Tensor<Scalar>, Tensor<Scalar>> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d_shallow = dy;
    d_shallow.data = dy.data.cwiseProduct(up_.data);
    Tensor<Scalar> d_up = dy;
    d_up.data = dy.data.cwiseProduct(projected_shallow_.data);
    const Tensor<Scalar> d_deep = upsample2x_backward(d_up, deep_rows_, deep_cols_);
    return {deep_proj_.backward(d_deep), shallow_proj_.backward(d_shallow)};
  }

 private:
  Conv2d<Scalar> deep_proj_;
  Conv2d<Scalar> shallow_proj_;
  Tensor<Scalar> up_;
  Tensor<Scalar> projected_shallow_;
  int deep_rows_ = 0;
  int deep_cols_ = 0;
};

/// Densely connected prediction block. Stage l (1-based) reads the channel
/// concatenation [input, stage 1, ..., stage l-1] and emits `growth`
/// channels through a 3x3 convolution + ReLU; a 1x1 projection of
/// [input, stage 1, ..., stage S] gives the output.
template <typename Scalar>
class DenseContext {
 public:
  DenseContext() = default;
  DenseContext(int in_channels, int stages, int growth, int projection, const std::string& name)
      : in_(in_channels), growth_(growth) {
    for (int l = 1; l <= stages; ++l)
      stages_.emplace_back(stage_input_channels(l), growth, 3, 1, name + ".stage" + std::to_string(l));
    projection_ = Conv2d<Scalar>(in_channels + stages * growth, projection, 1, 1, name + ".project");
  }

  int stages() const { return static_cast<int>(stages_.size()); }
  int in_channels() const { return in_; }
  int out_channels() const { return projection_.out_channels(); }
  int stage_input_channels(int l) const { return in_ + (l - 1) * growth_; }

  /// Channel range [begin, end) of each source inside the concatenation read
  /// by stage l: source 0 is the module input, source m >= 1 is stage m.
  std::vector<std::pair<int, int>> stage_sources(int l) const {
    std::vector<std::pair<int, int>> out{{0, in_}};
    for (int m = 1; m < l; ++m) out.emplace_back(in_ + (m - 1) * growth_, in_ + m * growth_);
    return out;
  }

  /// Replaces stage `l`'s output with zeros during forward (ablation probe).
  void set_ablation(std::optional<int> stage) { ablate_ = stage; }

  template <typename Rng>
  void init(Rng& rng) {
    for (auto& s : stages_) s.init(Init::kKaiming, rng);
    projection_.init(Init::kXavier, rng);
  }
  void collect(ParamList<Scalar>& out) {
    for (auto& s : stages_) s.collect(out);
    projection_.collect(out);
  }

  /// Inputs seen by each stage in the last forward pass.
  const std::vector<Tensor<Scalar>>& stage_inputs() const { return stage_inputs_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.channels != in_)
      throw std::invalid_argument("dense context: expected " + std::to_string(in_) + " channels, got " +
                                  std::to_string(x.channels));
    const int total = in_ + stages() * growth_;
    concat_ = Tensor<Scalar>(total, x.rows, x.cols);
    concat_.data.topRows(in_) = x.data;
    stage_inputs_.clear();
    for (int l = 1; l <= stages(); ++l) {
      Tensor<Scalar> input(stage_input_channels(l), x.rows, x.cols);
      input.data = concat_.data.topRows(stage_input_channels(l));
      Tensor<Scalar> y = stages_[l - 1].forward(input);
      stage_inputs_.push_back(std::move(input));
      if (ablate_ && *ablate_ == l) y.data.setZero();
      concat_.data.middleRows(stage_input_channels(l), growth_) = y.data;
    }
    return projection_.forward(concat_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dcat = projection_.backward(dy);
    for (int l = stages(); l >= 1; --l) {
      Tensor<Scalar> dout(growth_, dy.rows, dy.cols);
      dout.data = dcat.data.middleRows(stage_input_channels(l), growth_);
      if (ablate_ && *ablate_ == l) dout.data.setZero();
      const Tensor<Scalar> din = stages_[l - 1].backward(dout);
      dcat.data.topRows(stage_input_channels(l)) += din.data;
    }
    Tensor<Scalar> dx(in_, dy.rows, dy.cols);
    dx.data = dcat.data.topRows(in_);
    return dx;
  }

 private:
  int in_ = 0;
  int growth_ = 0;
  std::vector<ConvReLU<Scalar>> stages_;
  Conv2d<Scalar> projection_;
  Tensor<Scalar> concat_;
  std::vector<Tensor<Scalar>> stage_inputs_;
  std::optional<int> ablate_;
};

/// Names of head tensors produced by a forward pass and read by detection.
struct InferenceTrace {
  std::vector<std::string> computed;
  std::vector<std::string> consumed;
};

enum class ForwardMode { kTrain, kInference };

/// The full detector graph. First-shot heads read raw backbone features;
/// second-shot heads read LFPN-fused (lowest levels) or laterally projected
/// features passed through a dense context module. In inference mode only
/// the second-shot classification and regression heads are evaluated.
template <typename Scalar>
class DetectorNet {
 public:
  explicit DetectorNet(const DetectorConfig& cfg)
      : cfg_(cfg), backbone_(BackboneRegistry<Scalar>::instance().create(cfg)) {
    const auto& n = cfg.network;
    const int levels = cfg.num_levels();
    const int cls_ch = 2 * cfg.num_branches();
    lfpn_.resize(n.lfpn_levels);
    for (int l = 0; l < levels; ++l) {
      const std::string L = ".L" + std::to_string(l);
      const int bc = n.backbone_channels[l];
      first_cls_.emplace_back(bc, cls_ch, 3, 1, "first" + L + ".cls");
      first_reg_.emplace_back(bc, 4, 3, 1, "first" + L + ".reg");
      if (l < n.lfpn_levels) {
        const int deep_ch = (l + 1 < n.lfpn_levels) ? n.lfpn_channels : n.backbone_channels[l + 1];
        lfpn_[l] = LfpnFuse<Scalar>(deep_ch, bc, n.lfpn_channels, "lfpn" + L);
        lateral_.emplace_back();
      } else {
        lateral_.emplace_back(bc, n.lfpn_channels, 1, 1, "lateral" + L);
      }
      context_.emplace_back(n.lfpn_channels, n.dense_stages, n.dense_growth, n.dense_projection, "second" + L + ".context");
      second_cls_.emplace_back(n.dense_projection, cls_ch, 3, 1, "second" + L + ".cls");
      second_reg_.emplace_back(n.dense_projection, 4, 3, 1, "second" + L + ".reg");
      seg_.emplace_back(n.dense_projection, 1, 3, 1, "second" + L + ".seg");
    }
    af_obj_ = Conv2d<Scalar>(n.dense_projection, 1, 3, 1, "anchor_free.objectness");
    af_dist_ = Conv2d<Scalar>(n.dense_projection, 4, 3, 1, "anchor_free.distances");
  }

  const DetectorConfig& config() const { return cfg_; }
  int levels() const { return cfg_.num_levels(); }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    backbone_->init(rng);
    for (int l = 0; l < levels(); ++l) {
      first_cls_[l].init(Init::kHead, rng);
      first_reg_[l].init(Init::kHead, rng);
      if (l < cfg_.network.lfpn_levels)
        lfpn_[l].init(rng);
      else
        lateral_[l].init(Init::kXavier, rng);
      context_[l].init(rng);
      second_cls_[l].init(Init::kHead, rng);
      second_reg_[l].init(Init::kHead, rng);
      seg_[l].init(Init::kHead, rng);
      for (int b = 0; b < cfg_.num_branches(); ++b) {
        first_cls_[l].bias().value(2 * b, 0) = Scalar(kPriorLogit);
        second_cls_[l].bias().value(2 * b, 0) = Scalar(kPriorLogit);
      }
      seg_[l].bias().value.setConstant(Scalar(-kPriorLogit));
    }
    af_obj_.init(Init::kHead, rng);
    af_dist_.init(Init::kHead, rng);
    af_obj_.bias().value.setConstant(Scalar(-kPriorLogit));
  }

  /// log(49): face probability 0.02 at initialization.
  static constexpr double kPriorLogit = 3.8918202981106265;

  ParamList<Scalar> parameters() {
    ParamList<Scalar> out;
    backbone_->collect(out);
    for (int l = 0; l < levels(); ++l) {
      first_cls_[l].collect(out);
      first_reg_[l].collect(out);
      if (l < cfg_.network.lfpn_levels)
        lfpn_[l].collect(out);
      else
        lateral_[l].collect(out);
      context_[l].collect(out);
      second_cls_[l].collect(out);
      second_reg_[l].collect(out);
      seg_[l].collect(out);
    }
    af_obj_.collect(out);
    af_dist_.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  Backbone<Scalar>& backbone() { return *backbone_; }
  DenseContext<Scalar>& context(int level) { return context_[level]; }
  LfpnFuse<Scalar>& lfpn(int level) { return lfpn_[level]; }

  HeadOutputs<Scalar> forward(const Tensor<Scalar>& image, ForwardMode mode, InferenceTrace* trace = nullptr) {
    const int L = levels();
    const int fused = cfg_.network.lfpn_levels;
    const bool train = mode == ForwardMode::kTrain;
    auto note = [&](const std::string& name) {
      if (trace) trace->computed.push_back(name);
    };

    features_ = backbone_->forward(image);
    HeadOutputs<Scalar> out;
    if (train) {
      for (int l = 0; l < L; ++l) {
        out.shots[0].cls.push_back(first_cls_[l].forward(features_[l].values));
        out.shots[0].reg.push_back(first_reg_[l].forward(features_[l].values));
        note("first/cls/L" + std::to_string(l));
        note("first/reg/L" + std::to_string(l));
      }
    }

    std::vector<FeatureMap<Scalar>> pyramid(L);
    for (int l = L - 1; l >= fused; --l)
      pyramid[l] = {l, features_[l].stride, lateral_[l].forward(features_[l].values)};
    for (int l = fused - 1; l >= 0; --l) {
      const FeatureMap<Scalar>& deep = (l + 1 < fused) ? pyramid[l + 1] : features_[l + 1];
      pyramid[l] = lfpn_[l].forward(deep, features_[l]);
    }
    context_out_.assign(L, {});
    for (int l = 0; l < L; ++l) {
      context_out_[l] = context_[l].forward(pyramid[l].values);
      out.shots[1].cls.push_back(second_cls_[l].forward(context_out_[l]));
      out.shots[1].reg.push_back(second_reg_[l].forward(context_out_[l]));
      note("second/cls/L" + std::to_string(l));
      note("second/reg/L" + std::to_string(l));
      if (train) {
        out.seg.push_back(seg_[l].forward(context_out_[l]));
        note("second/seg/L" + std::to_string(l));
      }
    }
    if (train) {
      const int a = cfg_.network.anchor_free_level;
      out.af_objectness = af_obj_.forward(context_out_[a]);
      af_raw_ = af_dist_.forward(context_out_[a]);
      out.af_distances = af_raw_;
      const Scalar scale = Scalar(cfg_.network.anchor_free_distance_scale);
      out.af_distances.data = af_raw_.data.unaryExpr([scale](Scalar v) { return scale * softplus(v); });
      note("anchor_free/objectness");
      note("anchor_free/distances");
    }
    return out;
  }

  /// Back-propagates head gradients from the last kTrain forward pass and
  /// accumulates parameter gradients.
  void backward(const HeadOutputs<Scalar>& g) {
    const int L = levels();
    const int fused = cfg_.network.lfpn_levels;
    std::vector<Tensor<Scalar>> d_context(L);
    for (int l = 0; l < L; ++l) {
      Tensor<Scalar> d = second_cls_[l].backward(g.shots[1].cls[l]);
      d.data += second_reg_[l].backward(g.shots[1].reg[l]).data;
      d.data += seg_[l].backward(g.seg[l]).data;
      d_context[l] = std::move(d);
    }
    {
      const int a = cfg_.network.anchor_free_level;
      const Scalar scale = Scalar(cfg_.network.anchor_free_distance_scale);
      Tensor<Scalar> d_raw = g.af_distances;
      d_raw.data = g.af_distances.data.cwiseProduct(
          af_raw_.data.unaryExpr([scale](Scalar v) { return scale * sigmoid(v); }));
      d_context[a].data += af_obj_.backward(g.af_objectness).data;
      d_context[a].data += af_dist_.backward(d_raw).data;
    }

    std::vector<Tensor<Scalar>> d_pyramid(L);
    for (int l = 0; l < L; ++l) d_pyramid[l] = context_[l].backward(d_context[l]);

    std::vector<Tensor<Scalar>> d_features(L);
    for (int l = 0; l < L; ++l) {
      const auto& f = features_[l].values;
      d_features[l] = Tensor<Scalar>(f.channels, f.rows, f.cols);
    }
    for (int l = 0; l < fused; ++l) {
      auto [d_deep, d_shallow] = lfpn_[l].backward(d_pyramid[l]);
      d_features[l].data += d_shallow.data;
      if (l + 1 < fused)
        d_pyramid[l + 1].data += d_deep.data;
      else
        d_features[l + 1].data += d_deep.data;
    }
    for (int l = fused; l < L; ++l) d_features[l].data += lateral_[l].backward(d_pyramid[l]).data;
    for (int l = 0; l < L; ++l) {
      d_features[l].data += first_cls_[l].backward(g.shots[0].cls[l]).data;
      d_features[l].data += first_reg_[l].backward(g.shots[0].reg[l]).data;
    }
    backbone_->backward(d_features);
  }

 private:
  DetectorConfig cfg_;
  std::unique_ptr<Backbone<Scalar>> backbone_;
  std::vector<Conv2d<Scalar>> first_cls_, first_reg_;
  std::vector<LfpnFuse<Scalar>> lfpn_;
  std::vector<Conv2d<Scalar>> lateral_;
  std::vector<DenseContext<Scalar>> context_;
  std::vector<Conv2d<Scalar>> second_cls_, second_reg_, seg_;
  Conv2d<Scalar> af_obj_, af_dist_;

  std::vector<FeatureMap<Scalar>> features_;
  std::vector<Tensor<Scalar>> context_out_;
  Tensor<Scalar> af_raw_;
};

/// BGR 8-bit image -> normalized 3-channel tensor (channel order B, G, R).
Tensor<float> image_to_tensor(const cv::Mat& bgr, const NetworkConfig& cfg);

/// Float detector with parameter state, decoding and checkpoint I/O.
class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg);

  /// Fresh parameters from `seed`; marks the detector ready.
  void initialize(std::uint64_t seed);
  /// Loads parameters from a checkpoint. Rejects config-hash mismatches.
  void load(const std::filesystem::path& checkpoint);
  bool ready() const { return ready_; }
  void mark_ready() { ready_ = true; }

  const DetectorConfig& config() const { return cfg_; }
  DetectorNet<float>& net() { return net_; }
  const AnchorPyramid& pyramid() const { return pyramid_; }

  /// Runs the second-shot face branch over all levels: score filter, clamp,
  /// NMS, top max_detections. Boxes are in the input image's coordinates.
  std::vector<Detection> detect(const cv::Mat& bgr, InferenceTrace* trace = nullptr);
  std::vector<Detection> detect(const cv::Mat& bgr, double score_threshold, InferenceTrace* trace = nullptr);

 private:
  DetectorConfig cfg_;
  DetectorNet<float> net_;
  AnchorPyramid pyramid_;
  bool ready_ = false;
};

}  // namespace facedet
