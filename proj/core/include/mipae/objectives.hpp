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

// Loss terms for the predictive auto-encoder and its critic.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mipae/errors.hpp"
#include "mipae/nets.hpp"
#include "mipae/nn/ops.hpp"

namespace mipae::objectives {

using nn::Var;

struct LossWeights {
  double alpha = 1.0;    // similarity
  double beta = 0.0001;  // mutual information
  // Largest temporal offset between paired frames; 0 selects clip_length - 1.
  std::int64_t max_offset = 0;
  // Critic outputs are clamped to this value before exponentiation.
  double exp_clamp = 20.0;

  std::int64_t resolved_max_offset(std::int64_t clip_length) const {
    return max_offset == 0 ? clip_length - 1 : max_offset;
  }
  void validate(std::int64_t clip_length) const {
    if (!(alpha >= 0.0) || !(beta >= 0.0))
      throw ConfigError("loss weights alpha and beta must be >= 0");
    const std::int64_t k = resolved_max_offset(clip_length);
    if (k < 1 || k > clip_length - 1)
      throw ConfigError("max_offset K=" + std::to_string(k) + " must lie in [1, " +
                        std::to_string(clip_length - 1) + "]");
    if (!(exp_clamp > 0.0)) throw ConfigError("exp_clamp must be positive");
  }
};

// Joint rows pair two pose codes of one clip; marginal rows pair codes of
// two different clips. Each row is [first, second] along the feature axis.
template <typename T>
struct PairBatch {
  Var<T> joint;     // (Nj, 2 * pose_dim)
  Var<T> marginal;  // (Nm, 2 * pose_dim)
  std::vector<std::int64_t> joint_clip;                          // per joint row
  std::vector<std::int64_t> marginal_first, marginal_second;     // per marginal row
  std::vector<std::int64_t> offsets;                             // per joint row

  void validate() const {
    if (!joint.defined() || !marginal.defined() || joint.dim(0) == 0 ||
        marginal.dim(0) == 0)
      throw nn::ShapeError("pair batch needs nonempty joint and marginal sets");
    if (joint.dim(1) != marginal.dim(1))
      throw nn::ShapeError("pair batch: joint and marginal widths differ");
    if (!joint_clip.empty() && static_cast<std::int64_t>(joint_clip.size()) != joint.dim(0))
      throw nn::ShapeError("pair batch: joint clip ids do not match rows");
    if (marginal_first.size() != marginal_second.size())
      throw nn::ShapeError("pair batch: marginal clip ids mismatched");
    for (std::size_t i = 0; i < marginal_first.size(); ++i)
      if (marginal_first[i] == marginal_second[i])
        throw ConfigError("pair batch: marginal pair drawn from a single clip");
    for (std::int64_t k : offsets)
      if (k < 1) throw ConfigError("pair batch: offsets must be >= 1");
  }
};

// Builds pairs from per-clip codes: `first` row i and `second` row i come
// from clip i at times t and t + offsets[i]; the marginal set pairs row i of
// `first` with row partner[i] of `second`.
template <typename T>
PairBatch<T> make_pair_batch(const Var<T>& first, const Var<T>& second,
                             const std::vector<std::int64_t>& partner,
                             const std::vector<std::int64_t>& offsets) {
  const std::int64_t n = first.dim(0);
  if (second.dim(0) != n || static_cast<std::int64_t>(partner.size()) != n)
    throw nn::ShapeError("make_pair_batch: row counts differ");
  PairBatch<T> b;
  b.joint = nn::concat<T>({first, second}, 1);
  b.marginal = nn::concat<T>({first, nn::gather_rows(second, partner)}, 1);
  for (std::int64_t i = 0; i < n; ++i) {
    b.joint_clip.push_back(i);
    b.marginal_first.push_back(i);
    b.marginal_second.push_back(partner[static_cast<std::size_t>(i)]);
  }
  b.offsets = offsets;
  b.validate();
  return b;
}

template <typename T>
PairBatch<T> detached(const PairBatch<T>& b) {
  PairBatch<T> out = b;
  out.joint = nn::detach(b.joint);
  out.marginal = nn::detach(b.marginal);
  return out;
}

// Mean squared error over every pixel and batch element.
template <typename T>
Var<T> recon_loss(const Var<T>& decoded, const Var<T>& target) {
  if (decoded.shape() != target.shape())
    throw nn::ShapeError("recon_loss: " + nn::to_string(decoded.shape()) + " vs " +
                         nn::to_string(target.shape()));
  return nn::mean(nn::square(nn::sub(decoded, target)));
}

// Batch mean of the squared Euclidean distance between content codes.
template <typename T>
Var<T> sim_loss(const Var<T>& code_t, const Var<T>& code_tk) {
  if (code_t.shape() != code_tk.shape())
    throw nn::ShapeError("sim_loss: code shapes differ");
  return nn::scale(nn::sum(nn::square(nn::sub(code_t, code_tk))),
                   T{1} / static_cast<T>(code_t.dim(0)));
}

// Encodes both frame batches in one pass so normalization statistics are
// shared, then compares the codes.
template <typename T>
Var<T> sim_loss(nets::Encoder<T>& content_encoder, const Var<T>& frames_t,
                const Var<T>& frames_tk) {
  const std::int64_t n = frames_t.dim(0);
  Var<T> codes = content_encoder(nn::concat<T>({frames_t, frames_tk}, 0));
  return sim_loss(nn::slice_rows(codes, 0, n), nn::slice_rows(codes, n, 2 * n));
}

// GAN discriminator objective on raw critic scores:
// mean log sigmoid(joint) + mean log(1 - sigmoid(marginal)).
template <typename T>
Var<T> critic_objective_from_scores(const Var<T>& joint, const Var<T>& marginal) {
  return nn::add(nn::mean(nn::log_sigmoid(joint)),
                 nn::mean(nn::log_sigmoid(nn::scale(marginal, T{-1}))));
}

// Critic objective (to be maximized over critic parameters). Pose codes enter
// as constants.
template <typename T>
Var<T> critic_objective(const nets::Critic<T>& critic, const PairBatch<T>& batch) {
  batch.validate();
  return critic_objective_from_scores(critic(nn::detach(batch.joint)),
                                      critic(nn::detach(batch.marginal)));
}

// mean(joint) - mean(exp(min(marginal, ceiling))).
template <typename T>
Var<T> mi_bound_from_scores(const Var<T>& joint, const Var<T>& marginal,
                            double exp_clamp = 20.0) {
  return nn::sub(nn::mean(joint),
                 nn::mean(nn::exp(nn::clamp_max(marginal, static_cast<T>(exp_clamp)))));
}

// Variational MI lower bound between pose codes (to be minimized over the
// pose encoder). Critic parameters enter as constants.
template <typename T>
Var<T> mi_lower_bound(const nets::Critic<T>& critic, const PairBatch<T>& batch,
                      double exp_clamp = 20.0) {
  batch.validate();
  return mi_bound_from_scores(critic.frozen(batch.joint), critic.frozen(batch.marginal),
                              exp_clamp);
}

template <typename T>
Var<T> main_objective(const Var<T>& recon, const Var<T>& sim, const Var<T>& third,
                      const LossWeights& w) {
  return nn::add(nn::add(recon, nn::scale(sim, static_cast<T>(w.alpha))),
                 nn::scale(third, static_cast<T>(w.beta)));
}

inline double main_objective(double recon, double sim, double third,
                             const LossWeights& w) {
  return recon + w.alpha * sim + w.beta * third;
}

template <typename T>
struct AdversarialLosses {
  Var<T> disc_loss;  // minimized over the discriminator
  Var<T> enc_loss;   // minimized over the pose encoder
};

// Baseline adversarial pose loss. The discriminator (critic architecture,
// sigmoid applied here) classifies same-clip against cross-clip pairs with
// binary cross-entropy; the encoder is pushed toward outputs of 1/2 on every
// pair, whose cross-entropy minimum is ln 2.
template <typename T>
AdversarialLosses<T> adversarial_pose_loss(const nets::Critic<T>& disc,
                                           const PairBatch<T>& batch) {
  batch.validate();
  AdversarialLosses<T> out;
  out.disc_loss = nn::scale(critic_objective(disc, batch), T{-1});
  const Var<T> all = nn::concat<T>({batch.joint, batch.marginal}, 0);
  const Var<T> s = disc.frozen(all);
  // -(0.5 log p + 0.5 log (1 - p)) with p = sigmoid(s).
  out.enc_loss = nn::scale(
      nn::add(nn::mean(nn::log_sigmoid(s)),
              nn::mean(nn::log_sigmoid(nn::scale(s, T{-1})))),
      T{-0.5});
  return out;
}

}  // namespace mipae::objectives
