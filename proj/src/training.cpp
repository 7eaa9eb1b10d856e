// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include <opencv2/imgcodecs.hpp>

#include "facedet/anchors.hpp"
#include "facedet/sampling.hpp"

namespace facedet {
namespace {

constexpr const char* kVelocityPrefix = "optimizer.velocity.";

Rng sample_rng(std::uint64_t seed, std::uint64_t counter) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(counter),
                    std::uint32_t(counter >> 32), 0x5a17u};
  return Rng(seq);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch), 0x0dd3u};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void scale_grads(HeadOutputs<float>& g, float s) {
  for (auto& shot : g.shots) {
    for (auto& t : shot.cls) t.data *= s;
    for (auto& t : shot.reg) t.data *= s;
  }
  for (auto& t : g.seg) t.data *= s;
  g.af_objectness.data *= s;
  g.af_distances.data *= s;
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.total += r.total;
  sum.cls_first += r.cls_first;
  sum.cls_second += r.cls_second;
  sum.reg_first += r.reg_first;
  sum.reg_second += r.reg_second;
  sum.seg += r.seg;
  sum.anchor_free += r.anchor_free;
  sum.positives_first += r.positives_first;
  sum.positives_second += r.positives_second;
  sum.filtered_negatives += r.filtered_negatives;
}

void average(LossReport& r, int n) {
  for (double* v : {&r.total, &r.cls_first, &r.cls_second, &r.reg_first, &r.reg_second, &r.seg, &r.anchor_free})
    *v /= n;
}

void dump_batch(const std::filesystem::path& dir, const std::vector<Sample>& batch, int iteration) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["iteration"] = iteration;
  meta["samples"] = nlohmann::json::array();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::string name = "sample_" + std::to_string(b) + ".png";
    cv::imwrite((dir / name).string(), batch[b].image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& box : batch[b].boxes) boxes.push_back({box.x_min, box.y_min, box.x_max, box.y_max});
    meta["samples"].push_back({{"image", name}, {"boxes", boxes}});
  }
  std::ofstream(dir / "batch.json") << meta.dump(2) << '\n';
}

}  // namespace

double lr_at(int iteration, const OptimConfig& cfg) {
  const int total = cfg.scaled(cfg.total_iters);
  if (iteration < 0 || iteration > total)
    throw std::out_of_range("lr_at: iteration " + std::to_string(iteration) + " outside [0, " +
                            std::to_string(total) + "]");
  const int warmup = cfg.scaled(cfg.warmup_iters);
  if (iteration < warmup)
    return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * double(iteration) / double(warmup);
  double lr = cfg.lr_peak;
  for (int boundary : cfg.decay_iters)
    if (iteration >= cfg.scaled(boundary)) lr *= cfg.decay_factor;
  return lr;
}

void SgdMomentum::step(const ParamList<float>& params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto* p : params) velocity_.push_back(Mat<float>::Zero(p->value.rows(), p->value.cols()));
  }
  const float mu = float(momentum_);
  const float wd = float(weight_decay_);
  const float eta = float(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& v = velocity_[i];
    v = mu * v + p.grad + wd * p.value;
    p.value -= eta * v;
  }
}

void SgdMomentum::save(Checkpoint& ckpt, const ParamList<float>& params) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    ckpt.tensors.emplace_back(kVelocityPrefix + p->name, i < velocity_.size()
                                                             ? velocity_[i]
                                                             : Mat<float>::Zero(p->value.rows(), p->value.cols()));
  }
}

void SgdMomentum::load(const Checkpoint& ckpt, const ParamList<float>& params) {
  velocity_.clear();
  for (const auto* p : params) {
    const Mat<float>* v = ckpt.find(kVelocityPrefix + p->name);
    if (!v || v->rows() != p->value.rows() || v->cols() != p->value.cols())
      throw CheckpointError("checkpoint lacks optimizer state for '" + p->name + "'");
    velocity_.push_back(*v);
  }
}

nlohmann::json IterationLog::to_json() const {
  return {{"iteration", iteration},
          {"lr", lr},
          {"total", report.total},
          {"cls_first", report.cls_first},
          {"cls_second", report.cls_second},
          {"reg_first", report.reg_first},
          {"reg_second", report.reg_second},
          {"seg", report.seg},
          {"anchor_free", report.anchor_free},
          {"positives_first", report.positives_first},
          {"positives_second", report.positives_second},
          {"filtered_negatives", report.filtered_negatives}};
}

IterationLog IterationLog::from_json(const nlohmann::json& j) {
  IterationLog l;
  l.iteration = j.at("iteration").get<int>();
  l.lr = j.at("lr").get<double>();
  auto& r = l.report;
  r.total = j.at("total").get<double>();
  r.cls_first = j.at("cls_first").get<double>();
  r.cls_second = j.at("cls_second").get<double>();
  r.reg_first = j.at("reg_first").get<double>();
  r.reg_second = j.at("reg_second").get<double>();
  r.seg = j.at("seg").get<double>();
  r.anchor_free = j.at("anchor_free").get<double>();
  r.positives_first = j.at("positives_first").get<int>();
  r.positives_second = j.at("positives_second").get<int>();
  r.filtered_negatives = j.at("filtered_negatives").get<int>();
  return l;
}

std::vector<IterationLog> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read training log '" + path.string() + "'");
  std::vector<IterationLog> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(IterationLog::from_json(nlohmann::json::parse(line)));
  return out;
}

Checkpoint make_checkpoint(Detector& detector, const SgdMomentum& optimizer, int iteration,
                           const std::vector<std::size_t>& order, std::size_t cursor, int epoch) {
  Checkpoint ckpt;
  ckpt.config_hash = detector.config().model_hash_hex();
  ckpt.iteration = iteration;
  ckpt.extra = {{"epoch", epoch}, {"cursor", cursor}, {"order", order}, {"config", detector.config().dump()}};
  const auto params = detector.net().parameters();
  export_parameters(params, ckpt);
  optimizer.save(ckpt, params);
  return ckpt;
}

TrainResult train(const Dataset& data, const DetectorConfig& cfg, const TrainOptions& options) {
  namespace fs = std::filesystem;
  if (data.records.empty()) throw TrainingError("training dataset is empty");
  cfg.validate();

  Detector detector(cfg);
  auto& net = detector.net();
  const auto params = net.parameters();
  SgdMomentum optimizer(cfg.optim.momentum, cfg.optim.weight_decay);
  const LossWeights weights = LossWeights::from(cfg.losses);
  const int total = options.stop_at ? std::min(*options.stop_at, cfg.optim.scaled(cfg.optim.total_iters))
                                    : cfg.optim.scaled(cfg.optim.total_iters);
  const int batch_size = cfg.optim.batch_size;
  const int workers = cfg.run.deterministic ? 1 : std::max(1, cfg.run.workers);
  const std::uint64_t seed = cfg.run.seed;
  const fs::path latest = options.output_dir / "latest.ckpt";
  const fs::path log_path = options.output_dir / "train_log.jsonl";
  if (options.write_log || options.write_checkpoints) fs::create_directories(options.output_dir);

  int start = 0;
  int epoch = 0;
  std::size_t cursor = 0;
  std::vector<std::size_t> order = epoch_order(data.records.size(), seed, epoch);
  detector.initialize(seed);
  if (options.resume && fs::exists(latest)) {
    const Checkpoint ckpt = read_checkpoint(latest);
    require_hash(ckpt, cfg.model_hash_hex());
    import_parameters(ckpt, params);
    optimizer.load(ckpt, params);
    start = static_cast<int>(ckpt.iteration);
    epoch = ckpt.extra.at("epoch").get<int>();
    cursor = ckpt.extra.at("cursor").get<std::size_t>();
    order = ckpt.extra.at("order").get<std::vector<std::size_t>>();
    if (order.size() != data.records.size()) throw TrainingError("checkpoint was written for a different dataset size");
  }

  std::ofstream log;
  if (options.write_log) {
    std::vector<std::string> kept;
    if (start > 0 && fs::exists(log_path)) {
      std::ifstream in(log_path);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty() && nlohmann::json::parse(line).at("iteration").get<int>() < start) kept.push_back(line);
    }
    log.open(log_path, std::ios::trunc);
    for (const auto& line : kept) log << line << '\n';
  }

  auto save = [&](const fs::path& path, int iteration) {
    save_checkpoint(path, make_checkpoint(detector, optimizer, iteration, order, cursor, epoch));
  };

  TrainResult result;
  result.start_iteration = start;
  std::vector<std::size_t> picks(batch_size);
  std::vector<Sample> batch(batch_size);
  std::vector<TargetSet> targets(batch_size);

  for (int it = start; it < total; ++it) {
    for (int b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        ++epoch;
        cursor = 0;
        order = epoch_order(data.records.size(), seed, epoch);
      }
      picks[b] = order[cursor++];
    }
    auto prepare = [&](int b) {
      Rng rng = sample_rng(seed, std::uint64_t(it) * std::uint64_t(batch_size) + std::uint64_t(b));
      const Sample base = make_sample(data.images[picks[b]], data.records[picks[b]]);
      batch[b] = augment(base, cfg.sampler, rng);
      targets[b] = build_targets(batch[b], detector.pyramid(), cfg);
    };
    if (workers == 1) {
      for (int b = 0; b < batch_size; ++b) prepare(b);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (int b = w; b < batch_size; b += workers) prepare(b);
        });
      for (auto& t : pool) t.join();
    }

    net.zero_grad();
    LossReport sum;
    bool finite = true;
    for (int b = 0; b < batch_size; ++b) {
      const HeadOutputs<float> out = net.forward(image_to_tensor(batch[b].image, cfg.network), ForwardMode::kTrain);
      HeadOutputs<float> grads = HeadOutputs<float>::zeros_like(out);
      const LossReport r = detector_loss(out, targets[b], weights, &grads);
      if (!std::isfinite(r.total) || !out.all_finite()) {
        finite = false;
        break;
      }
      scale_grads(grads, 1.0f / float(batch_size));
      net.backward(grads);
      accumulate(sum, r);
    }
    if (!finite) {
      const fs::path dir = options.output_dir / ("nan_dump_" + std::to_string(it));
      dump_batch(dir, batch, it);
      throw TrainingError("non-finite loss at iteration " + std::to_string(it) + "; batch written to " + dir.string());
    }
    average(sum, batch_size);

    IterationLog entry{it, lr_at(it, cfg.optim), sum};
    optimizer.step(params, entry.lr);
    if (log.is_open()) log << entry.to_json().dump() << '\n' << std::flush;
    if (options.on_iteration) options.on_iteration(entry);
    result.log.push_back(entry);

    const int done = it + 1;
    if (options.write_checkpoints && cfg.optim.checkpoint_every > 0 && done % cfg.optim.checkpoint_every == 0 &&
        done < total) {
      save(options.output_dir / ("checkpoint-" + std::to_string(done) + ".ckpt"), done);
      save(latest, done);
    }
  }
  result.end_iteration = std::max(start, total);
  if (options.write_checkpoints) {
    result.final_checkpoint = options.output_dir / "final.ckpt";
    save(result.final_checkpoint, result.end_iteration);
    save(latest, result.end_iteration);
  }
  return result;
}

}  // namespace facedet
