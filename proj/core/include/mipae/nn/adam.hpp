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

#pragma once

#include <cmath>
#include <vector>

#include "mipae/nn/autograd.hpp"

namespace mipae::nn {

struct AdamOptions {
  double lr = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Scales the stored gradients of `params` so their joint L2 norm is at most
// `max_norm`. Returns the norm before scaling.
template <typename T>
double clip_grad_norm(const std::vector<Var<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    const auto& node = *p.node();
    if (node.grad.shape() != node.value.shape()) continue;
    for (std::int64_t i = 0; i < node.grad.numel(); ++i)
      sq += static_cast<double>(node.grad[i]) * static_cast<double>(node.grad[i]);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T f = static_cast<T>(max_norm / norm);
    for (const auto& p : params) {
      auto& node = *p.node();
      if (node.grad.shape() != node.value.shape()) continue;
      T* g = node.grad.data();
      for (std::int64_t i = 0; i < node.grad.numel(); ++i) g[i] *= f;
    }
  }
  return norm;
}

template <typename T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, AdamOptions opts)
      : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  // Applies one update using the gradients currently stored on the
  // parameters. Parameters without gradient are left untouched.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    const T step_size = static_cast<T>(opts_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(opts_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& node = *params_[k].node();
      if (node.grad.shape() != node.value.shape()) continue;
      T* w = node.value.data();
      const T* g = node.grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      for (std::int64_t i = 0; i < node.value.numel(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long step_count() const { return t_; }
  const AdamOptions& options() const { return opts_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamOptions opts_;
  long t_ = 0;
};

}  // namespace mipae::nn
