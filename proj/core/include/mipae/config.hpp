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

// Run configuration shared by every subcommand, stored as YAML.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mipae/nets.hpp"
#include "mipae/nn/adam.hpp"
#include "mipae/objectives.hpp"
#include "mipae/synthvid.hpp"

namespace mipae {

// Which term fills the third slot of the main objective.
enum class Baseline {
  kMipae,  // variational MI bound between pose codes
  kDrnet,  // adversarial pose loss
  kNone,   // nothing (beta forced to 0)
};

std::string to_string(Baseline b);
Baseline baseline_from_string(const std::string& s);

struct EvalConfig {
  std::int64_t test_sequences = 256;
  std::uint64_t test_seed = 1000003;
  // Samples per content class in the MIG probe set.
  std::int64_t mig_repeats = 6;
  std::int64_t mig_neighbors = 3;
  int pose_grid = 8;
  std::int64_t swap_rows = 8;
};

struct TrainConfig {
  synthvid::DatasetConfig data;
  nets::NetConfig net;
  objectives::LossWeights loss;
  nn::AdamOptions optimizer;
  EvalConfig eval;
  Baseline baseline = Baseline::kMipae;
  std::uint64_t seed = 0;
  std::int64_t batch_size = 32;
  std::int64_t steps_phase1 = 10000;
  std::int64_t steps_phase2 = 4000;
  std::int64_t checkpoint_interval = 1000;
  std::int64_t critic_steps_per_main_step = 1;
  // Probability that a reconstruction pairs content of frame t with pose of
  // frame t + k.
  double cross_recon_prob = 0.5;
  // Trailing share of the dataset held out for validation.
  double validation_fraction = 0.05;
  // Gradient-norm ceiling for the pose predictor; 0 disables clipping.
  double lstm_grad_clip = 1.0;

  // beta after applying the baseline (none forces 0).
  double effective_beta() const {
    return baseline == Baseline::kNone ? 0.0 : loss.beta;
  }
  void validate() const;
};

// Parses YAML; unknown keys and malformed values raise ConfigError with the
// source name and line number. Omitted keys keep their defaults.
TrainConfig config_from_yaml(const std::string& text,
                             const std::string& source = "<config>");
TrainConfig load_config(const std::filesystem::path& path);
std::string to_yaml(const TrainConfig& cfg);

}  // namespace mipae
