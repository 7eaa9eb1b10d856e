// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "facedet/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace facedet {
namespace {

constexpr const char* kMagic = "FACEDET-CKPT 1";

}  // namespace

const Mat<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["iteration"] = ckpt.iteration;
  manifest["extra"] = ckpt.extra;
  auto& list = manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.tensors) list.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out << kMagic << '\n' << text.size() << '\n' << text;
    for (const auto& [name, m] : ckpt.tensors)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    out.flush();
    if (!out) throw CheckpointError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw CheckpointError("'" + path.string() + "' is not a checkpoint");
  std::string size_line;
  std::getline(in, size_line);
  std::size_t size = 0;
  try {
    size = std::stoul(size_line);
  } catch (const std::exception&) {
    throw CheckpointError("corrupt checkpoint header in '" + path.string() + "'");
  }
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw CheckpointError("truncated checkpoint '" + path.string() + "'");

  Checkpoint ckpt;
  try {
    const auto manifest = nlohmann::json::parse(text);
    ckpt.config_hash = manifest.at("config_hash").get<std::string>();
    ckpt.iteration = manifest.at("iteration").get<std::int64_t>();
    ckpt.extra = manifest.value("extra", nlohmann::json::object());
    for (const auto& t : manifest.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      Mat<float> m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
      if (!in) throw CheckpointError("truncated checkpoint '" + path.string() + "'");
      ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint manifest in '" + path.string() + "': " + e.what());
  }
  return ckpt;
}

void export_parameters(const ParamList<float>& params, Checkpoint& ckpt, const std::string& prefix) {
  for (const auto* p : params) ckpt.tensors.emplace_back(prefix + p->name, p->value);
}

void import_parameters(const Checkpoint& ckpt, const ParamList<float>& params, const std::string& prefix) {
  for (auto* p : params) {
    const Mat<float>* m = ckpt.find(prefix + p->name);
    if (!m) throw CheckpointError("checkpoint lacks tensor '" + prefix + p->name + "'");
    if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
      throw CheckpointError("shape mismatch for tensor '" + prefix + p->name + "'");
    p->value = *m;
  }
}

void require_hash(const Checkpoint& ckpt, const std::string& expected) {
  if (ckpt.config_hash != expected)
    throw CheckpointError("checkpoint config hash " + ckpt.config_hash + " does not match config hash " + expected);
}

}  // namespace facedet
