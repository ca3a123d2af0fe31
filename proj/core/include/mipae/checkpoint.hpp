// Copyright 2026 The MIPAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Versioned container for trained networks, configuration and run state.
// Values are stored as 64-bit floats, which holds single-precision weights
// exactly, so a float model reloads bit-identically.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mipae/config.hpp"
#include "mipae/nets.hpp"

namespace mipae {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  TrainConfig config;
  // group name -> entry name -> values. Entries cover parameters and
  // buffers (batch-norm running statistics).
  std::map<std::string, std::map<std::string, nn::Tensor<double>>> groups;
  std::int64_t phase1_step = 0;
  std::int64_t phase2_step = 0;
  std::string rng_state;  // textual engine state
  std::map<std::string, double> stats;
  std::uint32_t precision_bytes = 4;  // width of the scalar type trained with

  bool has_group(const std::string& name) const { return groups.count(name) != 0; }
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
void capture_networks(nets::Networks<T>& nets, Checkpoint& ckpt) {
  ckpt.precision_bytes = sizeof(T);
  for (auto& [name, module] : nets.groups()) {
    auto& group = ckpt.groups[name];
    group.clear();
    for (const auto& [pname, var] : module->named_parameters())
      group[pname] = var.value().template cast<double>();
    for (const auto& [bname, buf] : module->named_buffers())
      group[bname] = buf->template cast<double>();
  }
}

// Copies stored values into matching networks. Groups absent from the
// checkpoint are skipped unless listed in `required`.
template <typename T>
void restore_networks(const Checkpoint& ckpt, nets::Networks<T>& nets,
                      const std::vector<std::string>& required = {}) {
  for (const auto& r : required)
    if (!ckpt.has_group(r)) throw ConfigError("checkpoint lacks component '" + r + "'");
  for (auto& [name, module] : nets.groups()) {
    auto git = ckpt.groups.find(name);
    if (git == ckpt.groups.end()) continue;
    const auto& group = git->second;
    auto fetch = [&](const std::string& entry, const nn::Shape& shape) -> const nn::Tensor<double>& {
      auto it = group.find(entry);
      if (it == group.end())
        throw ConfigError("checkpoint component '" + std::string(name) + "' lacks '" +
                          entry + "'");
      if (it->second.shape() != shape)
        throw ConfigError("checkpoint entry '" + std::string(name) + "." + entry +
                          "' has shape " + nn::to_string(it->second.shape()) +
                          ", network expects " + nn::to_string(shape));
      return it->second;
    };
    for (auto& [pname, var] : module->named_parameters()) {
      nn::Var<T> v = var;
      v.mutable_value() = fetch(pname, v.shape()).template cast<T>();
    }
    for (auto& [bname, buf] : module->named_buffers())
      *buf = fetch(bname, buf->shape()).template cast<T>();
  }
}

}  // namespace mipae
