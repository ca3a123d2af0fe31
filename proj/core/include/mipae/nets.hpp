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

// The five trainable components: content encoder, pose encoder, decoder,
// critic and recurrent pose predictor.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mipae/errors.hpp"
#include "mipae/nn/module.hpp"

namespace mipae::nets {

using nn::Tensor;
using nn::Var;

struct NetConfig {
  std::int64_t content_dim = 128;
  std::int64_t pose_dim = 5;
  std::int64_t base_channels = 64;
  std::int64_t frame_size = 64;
  std::int64_t channels = 1;
  bool use_skip_connections = false;
  std::int64_t critic_hidden = 512;
  std::int64_t critic_layers = 2;
  std::int64_t lstm_cells = 256;
  std::int64_t lstm_layers = 2;

  // Number of stride-2 stages between the frame and the 4x4 feature map.
  std::int64_t downsampling_stages() const;
  void validate() const;
};

inline std::int64_t NetConfig::downsampling_stages() const {
  std::int64_t s = frame_size, n = 0;
  while (s > 4 && s % 2 == 0) {
    s /= 2;
    ++n;
  }
  return s == 4 ? n : -1;
}

inline void NetConfig::validate() const {
  if (content_dim <= 0 || pose_dim <= 0 || base_channels <= 0 || channels <= 0 ||
      critic_hidden <= 0 || critic_layers <= 0 || lstm_cells <= 0 ||
      lstm_layers <= 0) {
    throw ConfigError("network dimensions must be positive");
  }
  if (pose_dim >= content_dim) {
    throw ConfigError("pose_dim (" + std::to_string(pose_dim) +
                      ") must be smaller than content_dim (" +
                      std::to_string(content_dim) + ")");
  }
  if (downsampling_stages() < 1) {
    throw ConfigError("frame_size " + std::to_string(frame_size) +
                      " is not a power-of-two multiple of the 4x4 feature map");
  }
}

template <typename T>
struct EncoderOutput {
  Var<T> code;                  // (N, dim)
  std::vector<Var<T>> features;  // per stage, finest first
};

// DCGAN encoder: stride-2 4x4 convolutions down to 4x4, then a 4x4 valid
// convolution to the code, batch-normalized and squashed with tanh.
template <typename T>
class Encoder : public nn::Module<T> {
 public:
  Encoder(const NetConfig& cfg, std::int64_t out_dim, nn::Rng& rng)
      : out_dim_(out_dim) {
    cfg.validate();
    const std::int64_t stages = cfg.downsampling_stages();
    std::int64_t in_c = cfg.channels;
    for (std::int64_t i = 0; i < stages; ++i) {
      const std::int64_t out_c = cfg.base_channels << i;
      const std::string name = "down" + std::to_string(i);
      convs_.push_back(this->register_module(
          name + ".conv", std::make_unique<nn::Conv2d<T>>(
                              in_c, out_c, 4, nn::ConvParams{2, 1}, rng)));
      norms_.push_back(i == 0 ? nullptr
                              : this->register_module(
                                    name + ".norm",
                                    std::make_unique<nn::BatchNorm<T>>(out_c, rng)));
      in_c = out_c;
    }
    head_ = this->register_module(
        "head.conv", std::make_unique<nn::Conv2d<T>>(
                         in_c, out_dim, 4, nn::ConvParams{1, 0}, rng));
    head_norm_ = this->register_module(
        "head.norm", std::make_unique<nn::BatchNorm<T>>(out_dim, rng));
  }

  std::int64_t out_dim() const { return out_dim_; }

  EncoderOutput<T> forward(const Var<T>& frames) {
    EncoderOutput<T> out;
    Var<T> h = frames;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = (*convs_[i])(h);
      if (norms_[i]) h = (*norms_[i])(h);
      h = nn::leaky_relu(h, T(0.2));
      out.features.push_back(h);
    }
    h = (*head_norm_)((*head_)(h));
    out.code = nn::reshape(nn::tanh(h), {frames.dim(0), out_dim_});
    return out;
  }

  Var<T> operator()(const Var<T>& frames) { return forward(frames).code; }

 private:
  std::int64_t out_dim_;
  std::vector<nn::Conv2d<T>*> convs_;
  std::vector<nn::BatchNorm<T>*> norms_;
  nn::Conv2d<T>* head_ = nullptr;
  nn::BatchNorm<T>* head_norm_ = nullptr;
};

// Mirror of Encoder with transposed convolutions. Consumes [z_c, z_p] and
// emits frames through a sigmoid, so outputs stay in [0, 1].
template <typename T>
class Decoder : public nn::Module<T> {
 public:
  Decoder(const NetConfig& cfg, nn::Rng& rng)
      : cfg_(cfg), in_dim_(cfg.content_dim + cfg.pose_dim) {
    cfg.validate();
    const std::int64_t stages = cfg.downsampling_stages();
    const std::int64_t skip = cfg.use_skip_connections ? 2 : 1;
    std::int64_t c = cfg.base_channels << (stages - 1);
    stem_ = this->register_module(
        "stem.conv", std::make_unique<nn::ConvTranspose2d<T>>(
                         in_dim_, c, 4, nn::ConvParams{1, 0}, rng));
    stem_norm_ = this->register_module(
        "stem.norm", std::make_unique<nn::BatchNorm<T>>(c, rng));
    for (std::int64_t i = stages - 1; i >= 1; --i) {
      const std::int64_t out_c = cfg.base_channels << (i - 1);
      const std::string name = "up" + std::to_string(i);
      ups_.push_back(this->register_module(
          name + ".conv", std::make_unique<nn::ConvTranspose2d<T>>(
                              c * skip, out_c, 4, nn::ConvParams{2, 1}, rng)));
      norms_.push_back(this->register_module(
          name + ".norm", std::make_unique<nn::BatchNorm<T>>(out_c, rng)));
      c = out_c;
    }
    out_ = this->register_module(
        "out.conv",
        std::make_unique<nn::ConvTranspose2d<T>>(c * skip, cfg.channels, 4,
                                                 nn::ConvParams{2, 1}, rng,
                                                 /*bias=*/true));
  }

  // `skips` are the content encoder's stage features (finest first); required
  // iff the config enables skip connections.
  Var<T> forward(const Var<T>& content, const Var<T>& pose,
                 const std::vector<Var<T>>& skips = {}) {
    const std::int64_t n = content.dim(0);
    if (pose.dim(0) != n) throw nn::ShapeError("decoder: batch mismatch");
    if (cfg_.use_skip_connections &&
        skips.size() != ups_.size() + 1) {
      throw ConfigError("decoder configured with skip connections needs " +
                        std::to_string(ups_.size() + 1) + " feature maps");
    }
    Var<T> h = nn::reshape(nn::concat<T>({content, pose}, 1), {n, in_dim_, 1, 1});
    h = nn::leaky_relu((*stem_norm_)((*stem_)(h)), T(0.2));
    std::size_t skip_idx = skips.size();
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      if (cfg_.use_skip_connections) h = nn::concat<T>({h, skips[--skip_idx]}, 1);
      h = nn::leaky_relu((*norms_[i])((*ups_[i])(h)), T(0.2));
    }
    if (cfg_.use_skip_connections) h = nn::concat<T>({h, skips[--skip_idx]}, 1);
    return nn::sigmoid((*out_)(h));
  }

 private:
  NetConfig cfg_;
  std::int64_t in_dim_;
  nn::ConvTranspose2d<T>* stem_ = nullptr;
  nn::BatchNorm<T>* stem_norm_ = nullptr;
  std::vector<nn::ConvTranspose2d<T>*> ups_;
  std::vector<nn::BatchNorm<T>*> norms_;
  nn::ConvTranspose2d<T>* out_ = nullptr;
};

// MLP over concatenated pose pairs. Emits an unbounded logit; the final layer
// starts at zero so an untrained critic is uninformative.
template <typename T>
class Critic : public nn::Module<T> {
 public:
  Critic(const NetConfig& cfg, nn::Rng& rng) {
    std::int64_t in = 2 * cfg.pose_dim;
    for (std::int64_t i = 0; i < cfg.critic_layers; ++i) {
      hidden_.push_back(this->register_module(
          "fc" + std::to_string(i),
          std::make_unique<nn::Linear<T>>(in, cfg.critic_hidden, rng)));
      in = cfg.critic_hidden;
    }
    out_ = this->register_module("out", std::make_unique<nn::Linear<T>>(in, 1, rng));
    out_->weight().mutable_value().fill(T{0});
    out_->bias().mutable_value().fill(T{0});
  }

  // (N, 2 * pose_dim) -> (N, 1)
  Var<T> operator()(const Var<T>& pairs) const {
    Var<T> h = pairs;
    for (auto* layer : hidden_) h = nn::relu((*layer)(h));
    return (*out_)(h);
  }

  Var<T> operator()(const Var<T>& first, const Var<T>& second) const {
    return (*this)(nn::concat<T>({first, second}, 1));
  }

  // Same map with the weights cut out of the graph: gradients reach the
  // inputs but never the critic's parameters.
  Var<T> frozen(const Var<T>& pairs) const {
    Var<T> h = pairs;
    for (auto* layer : hidden_)
      h = nn::relu(nn::linear(h, nn::detach(layer->weight()), nn::detach(layer->bias())));
    return nn::linear(h, nn::detach(out_->weight()), nn::detach(out_->bias()));
  }

 private:
  std::vector<nn::Linear<T>*> hidden_;
  nn::Linear<T>* out_ = nullptr;
};

template <typename T>
using PredictorState = std::vector<nn::LstmState<T>>;

// Linear input embedding, stacked LSTM cells, linear output embedding. The
// output is a step added to the previous pose.
template <typename T>
class PosePredictor : public nn::Module<T> {
 public:
  PosePredictor(const NetConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    embed_ = this->register_module(
        "embed", std::make_unique<nn::Linear<T>>(cfg.content_dim + cfg.pose_dim,
                                                 cfg.lstm_cells, rng));
    for (std::int64_t i = 0; i < cfg.lstm_layers; ++i) {
      cells_.push_back(this->register_module(
          "lstm" + std::to_string(i),
          std::make_unique<nn::LstmCell<T>>(cfg.lstm_cells, cfg.lstm_cells, rng)));
    }
    out_ = this->register_module(
        "out", std::make_unique<nn::Linear<T>>(cfg.lstm_cells, cfg.pose_dim, rng));
  }

  PredictorState<T> zero_state(std::int64_t batch) const {
    PredictorState<T> s;
    for (auto* c : cells_) s.push_back(c->zero_state(batch));
    return s;
  }

  struct Step {
    Var<T> pose;
    PredictorState<T> state;
  };

  Step step(const Var<T>& content, const Var<T>& prev_pose,
            const PredictorState<T>& state) const {
    Var<T> h = (*embed_)(nn::concat<T>({content, prev_pose}, 1));
    PredictorState<T> next;
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      next.push_back((*cells_[i])(h, state[i]));
      h = next.back().h;
    }
    return {nn::add(prev_pose, (*out_)(h)), std::move(next)};
  }

 private:
  NetConfig cfg_;
  nn::Linear<T>* embed_ = nullptr;
  std::vector<nn::LstmCell<T>*> cells_;
  nn::Linear<T>* out_ = nullptr;
};

// Component names used as parameter-group keys in checkpoints.
inline constexpr const char* kContentEncoder = "content_encoder";
inline constexpr const char* kPoseEncoder = "pose_encoder";
inline constexpr const char* kDecoder = "decoder";
inline constexpr const char* kCritic = "critic";
inline constexpr const char* kPosePredictor = "pose_predictor";

template <typename T>
struct Networks {
  NetConfig config;
  std::unique_ptr<Encoder<T>> content_encoder;
  std::unique_ptr<Encoder<T>> pose_encoder;
  std::unique_ptr<Decoder<T>> decoder;
  std::unique_ptr<Critic<T>> critic;
  std::unique_ptr<PosePredictor<T>> pose_predictor;

  // Each component draws its initial weights from its own stream derived
  // from `seed`.
  static Networks build(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Networks n;
    n.config = cfg;
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32), 0x6d697061u};
    std::vector<std::uint32_t> seeds(5);
    seq.generate(seeds.begin(), seeds.end());
    nn::Rng r0(seeds[0]), r1(seeds[1]), r2(seeds[2]), r3(seeds[3]), r4(seeds[4]);
    n.content_encoder = std::make_unique<Encoder<T>>(cfg, cfg.content_dim, r0);
    n.pose_encoder = std::make_unique<Encoder<T>>(cfg, cfg.pose_dim, r1);
    n.decoder = std::make_unique<Decoder<T>>(cfg, r2);
    n.critic = std::make_unique<Critic<T>>(cfg, r3);
    n.pose_predictor = std::make_unique<PosePredictor<T>>(cfg, r4);
    return n;
  }

  std::vector<std::pair<std::string, nn::Module<T>*>> groups() const {
    return {{kContentEncoder, content_encoder.get()},
            {kPoseEncoder, pose_encoder.get()},
            {kDecoder, decoder.get()},
            {kCritic, critic.get()},
            {kPosePredictor, pose_predictor.get()}};
  }

  void set_training(bool on) {
    for (auto& [_, m] : groups()) m->set_training(on);
  }
};

}  // namespace mipae::nets
