// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "facedet/nn.hpp"

namespace facedet {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Named float arrays plus a JSON manifest. On disk: the magic line
/// "FACEDET-CKPT 1", the manifest size, the manifest, then raw
/// little-endian float32 data in manifest order.
struct Checkpoint {
  std::string config_hash;
  std::int64_t iteration = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  const Mat<float>* find(const std::string& name) const;
};

/// Writes to a temporary sibling and renames it over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void export_parameters(const ParamList<float>& params, Checkpoint& ckpt, const std::string& prefix = "");
/// Every parameter must be present with a matching shape.
void import_parameters(const Checkpoint& ckpt, const ParamList<float>& params, const std::string& prefix = "");

/// Throws CheckpointError unless the checkpoint's hash equals `expected`.
void require_hash(const Checkpoint& ckpt, const std::string& expected);

}  // namespace facedet
