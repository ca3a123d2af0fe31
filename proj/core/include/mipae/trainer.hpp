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

// Two training phases: the auto-encoder against its critic, then the
// recurrent pose predictor on frozen encoders. Both trainers are
// instantiated for float and double.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <vector>

#include "mipae/checkpoint.hpp"
#include "mipae/config.hpp"
#include "mipae/nets.hpp"
#include "mipae/nn/adam.hpp"
#include "mipae/objectives.hpp"
#include "mipae/synthvid.hpp"

namespace mipae::trainer {

struct LossRecord {
  std::int64_t step = 0;
  double recon = 0.0;
  double sim = 0.0;
  double mi = 0.0;      // third objective term (MI bound or adversarial encoder loss)
  double critic = 0.0;  // critic objective before the last critic update
};

// Clip and frame indices of one training batch.
struct Batch {
  std::vector<std::int64_t> clips;    // dataset indices, all distinct
  std::vector<std::int64_t> partner;  // batch row paired in the marginal set
  std::vector<std::int64_t> t;        // anchor frame
  std::vector<std::int64_t> k_mi;     // offset for MI pairs, in [1, K]
  std::vector<std::int64_t> k_sim;    // offset for the similarity loss, in [0, K]
  std::vector<std::uint8_t> cross;    // reconstruct frame t + k_mi from pose of that frame
};

// First `n - round(n * fraction)` clips train, the rest validate.
std::vector<std::int64_t> training_clips(std::int64_t n, double validation_fraction);
std::vector<std::int64_t> validation_clips(std::int64_t n, double validation_fraction);

template <typename T>
class MainTrainer {
 public:
  MainTrainer(const TrainConfig& cfg, const synthvid::Dataset& data,
              std::vector<std::int64_t> clips);
  MainTrainer(const TrainConfig& cfg, const synthvid::Dataset& data);

  struct Forward {
    Batch batch;
    nn::Var<T> recon;
    nn::Var<T> sim;
    objectives::PairBatch<T> pairs;
  };

  Batch sample_batch();
  Forward forward(const Batch& batch);
  // One ascent step on the critic objective using constant pose codes.
  // Returns the objective before the update.
  double critic_step(const Forward& fwd);
  // One descent step on the main objective for both encoders and the
  // decoder; the critic enters with fixed parameters.
  LossRecord main_step(const Forward& fwd, double critic_value);
  // sample, forward, critic step(s), main step.
  LossRecord step();

  // Same-frame reconstruction MSE per pixel in inference mode over every
  // frame of the given clips.
  double reconstruction_mse(const std::vector<std::int64_t>& clips);

  Checkpoint checkpoint();
  nets::Networks<T>& networks() { return nets_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t steps_done() const { return steps_; }
  std::string rng_state() const;

 private:
  nn::Tensor<T> gather_frames(const std::vector<std::int64_t>& clips,
                              const std::vector<std::int64_t>& frames) const;
  void check_finite(const Forward& fwd, const LossRecord& rec) const;

  TrainConfig cfg_;
  const synthvid::Dataset& data_;
  std::vector<std::int64_t> clips_;
  nets::Networks<T> nets_;
  std::unique_ptr<nn::Adam<T>> main_opt_;
  std::unique_ptr<nn::Adam<T>> critic_opt_;
  std::mt19937_64 rng_;
  std::int64_t steps_ = 0;
  std::int64_t max_offset_ = 1;

 public:
  // Directory for non-finite-loss dumps; empty means the working directory.
  std::filesystem::path dump_dir;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoints and logs; empty keeps them in memory
  std::ostream* log = nullptr;    // CSV: step,L_recon,L_sim,L_MI,L_C
  std::int64_t validation_interval = 500;
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  Checkpoint best;  // lowest validation reconstruction error
  Checkpoint last;
  std::vector<LossRecord> history;
  double best_validation = 0.0;
};

template <typename T>
TrainResult train_main(const synthvid::Dataset& data, const TrainConfig& cfg,
                       const TrainOptions& opts = {});

void write_loss_header(std::ostream& os);
void write_loss_row(std::ostream& os, const LossRecord& r);

// Where the predictor's input at a rolled step came from.
enum class InputSource { kEncoder, kPrediction };

struct RollTrace {
  std::vector<std::int64_t> input_frame;  // 1-based index of the input pose
  std::vector<InputSource> source;
};

template <typename T>
struct PoseRoll {
  std::vector<nn::Var<T>> predicted;  // poses for frames 2..length (1-based)
  RollTrace trace;
};

// Rolls the predictor from frame 1 to `length`: the input to the step that
// predicts frame t is the encoder pose of frame t-1 while t-1 <= context, and
// the model's own prediction of frame t-1 afterwards.
template <typename T>
PoseRoll<T> roll_poses(const nets::PosePredictor<T>& predictor, const nn::Var<T>& content,
                       const std::vector<nn::Var<T>>& encoder_poses, std::int64_t context,
                       std::int64_t length);

// Frozen codes of every clip: content code of the last context frame and
// pose codes of every frame.
template <typename T>
struct ClipCodes {
  nn::Tensor<T> content;  // (N, content_dim)
  nn::Tensor<T> poses;    // (N, length, pose_dim)
};

template <typename T>
ClipCodes<T> encode_clips(nets::Networks<T>& nets, const synthvid::Dataset& data,
                          const std::vector<std::int64_t>& clips, std::int64_t context);

template <typename T>
class LstmTrainer {
 public:
  LstmTrainer(const TrainConfig& cfg, nets::Networks<T>& nets, const synthvid::Dataset& data,
              std::vector<std::int64_t> clips);
  // One optimizer step; returns the batch mean of the summed squared
  // pose errors.
  double step();
  const RollTrace& last_trace() const { return trace_; }
  std::int64_t steps_done() const { return steps_; }

 private:
  TrainConfig cfg_;
  nets::Networks<T>& nets_;
  ClipCodes<T> codes_;
  std::unique_ptr<nn::Adam<T>> opt_;
  std::mt19937_64 rng_;
  RollTrace trace_;
  std::int64_t steps_ = 0;
};

// Phase 2 on top of a phase-1 checkpoint; the returned checkpoint carries the
// trained predictor and unchanged phase-1 groups.
template <typename T>
Checkpoint train_lstm(const synthvid::Dataset& data, const Checkpoint& ckpt,
                      const TrainConfig& cfg, std::ostream* log = nullptr);

struct PoseErrorStats {
  double mean_error = 0.0;         // mean ||z_hat - z|| over predicted frames
  double mean_displacement = 0.0;  // mean ||z^{t+1} - z^t|| of encoder poses
};

template <typename T>
PoseErrorStats pose_prediction_error(nets::Networks<T>& nets, const synthvid::Dataset& data,
                                     const std::vector<std::int64_t>& clips,
                                     std::int64_t context);

// Networks restored from a checkpoint in inference mode.
template <typename T>
nets::Networks<T> load_networks(const Checkpoint& ckpt,
                                const std::vector<std::string>& required = {});

// context: (B, C, channels, H, W). Returns (B, horizon, channels, H, W).
// Content stays fixed to the code of the last context frame.
template <typename T>
nn::Tensor<T> predict(nets::Networks<T>& nets, const nn::Tensor<T>& context,
                      std::int64_t horizon);

// Checks the context length against the checkpoint's configuration.
template <typename T>
nn::Tensor<T> predict(const Checkpoint& ckpt, nets::Networks<T>& nets,
                      const nn::Tensor<T>& context, std::int64_t horizon);

// Inference-mode encoding in chunks. frames: (N, channels, H, W).
template <typename T>
nn::Tensor<T> encode(nets::Encoder<T>& encoder, const nn::Tensor<T>& frames,
                     std::int64_t chunk = 256);

// Inference-mode decoding in chunks: content codes (and skip features, when
// enabled) come from `content_frames` (N, channels, H, W), poses from
// `pose` (N, pose_dim).
template <typename T>
nn::Tensor<T> decode_with(nets::Networks<T>& nets, const nn::Tensor<T>& content_frames,
                          const nn::Tensor<T>& pose, std::int64_t chunk = 256);

}  // namespace mipae::trainer
