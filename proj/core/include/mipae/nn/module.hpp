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
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mipae/nn/ops.hpp"

namespace mipae::nn {

using Rng = std::mt19937_64;

// Owns named parameters, buffers (non-trainable state such as batch-norm
// running statistics) and child modules. Parameters are shared graph leaves,
// so forward passes reference them without copying.
template <typename T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  Module(Module&&) noexcept = default;
  Module& operator=(Module&&) noexcept = default;
  virtual ~Module() = default;

  using NamedParam = std::pair<std::string, Var<T>>;
  using NamedBuffer = std::pair<std::string, Tensor<T>*>;

  std::vector<NamedParam> named_parameters() const {
    std::vector<NamedParam> out;
    collect_params("", out);
    return out;
  }

  std::vector<Var<T>> parameters() const {
    std::vector<Var<T>> out;
    for (auto& [_, v] : named_parameters()) out.push_back(v);
    return out;
  }

  std::vector<NamedBuffer> named_buffers() {
    std::vector<NamedBuffer> out;
    collect_buffers("", out);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (auto& [_, v] : named_parameters()) n += v.value().numel();
    return n;
  }

  void set_training(bool on) {
    training_ = on;
    for (auto& [_, c] : children_) c->set_training(on);
  }
  bool training() const { return training_; }

  void set_requires_grad(bool on) {
    for (auto& [_, v] : params_) v.set_requires_grad(on);
    for (auto& [_, c] : children_) c->set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& [_, v] : named_parameters()) v.zero_grad();
  }

 protected:
  Var<T> register_parameter(std::string name, Tensor<T> init) {
    params_.emplace_back(std::move(name), Var<T>(std::move(init), true));
    return params_.back().second;
  }

  Tensor<T>* register_buffer(std::string name, Tensor<T> init) {
    buffers_.emplace_back(std::move(name),
                          std::make_unique<Tensor<T>>(std::move(init)));
    return buffers_.back().second.get();
  }

  template <typename M>
  M* register_module(std::string name, std::unique_ptr<M> child) {
    M* raw = child.get();
    raw->set_training(training_);
    children_.emplace_back(std::move(name), std::move(child));
    return raw;
  }

 private:
  void collect_params(const std::string& prefix,
                      std::vector<NamedParam>& out) const {
    for (auto& [n, v] : params_) out.emplace_back(prefix + n, v);
    for (auto& [n, c] : children_) c->collect_params(prefix + n + ".", out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    for (auto& [n, b] : buffers_) out.emplace_back(prefix + n, b.get());
    for (auto& [n, c] : children_) c->collect_buffers(prefix + n + ".", out);
  }

  bool training_ = true;
  std::vector<NamedParam> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

namespace init {

template <typename T>
Tensor<T> normal(Shape shape, double mean, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

}  // namespace init

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = this->register_parameter("weight",
                                       init::uniform<T>({out, in}, bound, rng));
    if (bias) {
      bias_ = this->register_parameter("bias", init::uniform<T>({out}, bound, rng));
    }
  }

  Var<T> operator()(const Var<T>& x) const { return linear(x, weight_, bias_); }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

// DCGAN-style initialization: weights ~ N(0, 0.02), no bias by default since
// a normalization layer usually follows.
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::int64_t in_c, std::int64_t out_c, std::int64_t kernel,
         ConvParams params, Rng& rng, bool bias = false)
      : params_(params) {
    weight_ = this->register_parameter(
        "weight", init::normal<T>({out_c, in_c, kernel, kernel}, 0.0, 0.02, rng));
    if (bias) bias_ = this->register_parameter("bias", Tensor<T>({out_c}));
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv2d(x, weight_, bias_, params_);
  }

 private:
  ConvParams params_;
  Var<T> weight_;
  Var<T> bias_;
};

template <typename T>
class ConvTranspose2d : public Module<T> {
 public:
  ConvTranspose2d(std::int64_t in_c, std::int64_t out_c, std::int64_t kernel,
                  ConvParams params, Rng& rng, bool bias = false)
      : params_(params) {
    weight_ = this->register_parameter(
        "weight", init::normal<T>({in_c, out_c, kernel, kernel}, 0.0, 0.02, rng));
    if (bias) bias_ = this->register_parameter("bias", Tensor<T>({out_c}));
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv_transpose2d(x, weight_, bias_, params_);
  }

 private:
  ConvParams params_;
  Var<T> weight_;
  Var<T> bias_;
};

template <typename T>
class BatchNorm : public Module<T> {
 public:
  BatchNorm(std::int64_t channels, Rng& rng) {
    gamma_ = this->register_parameter(
        "weight", init::normal<T>({channels}, 1.0, 0.02, rng));
    beta_ = this->register_parameter("bias", Tensor<T>({channels}));
    running_mean_ = this->register_buffer("running_mean", Tensor<T>({channels}));
    running_var_ =
        this->register_buffer("running_var", Tensor<T>({channels}, T{1}));
  }

  Var<T> operator()(const Var<T>& x) {
    BatchNormState<T> st;
    st.running_mean = running_mean_;
    st.running_var = running_var_;
    st.training = this->training();
    return batch_norm(x, gamma_, beta_, st);
  }

 private:
  Var<T> gamma_;
  Var<T> beta_;
  Tensor<T>* running_mean_ = nullptr;
  Tensor<T>* running_var_ = nullptr;
};

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

// Gate order (input, forget, cell, output).
template <typename T>
class LstmCell : public Module<T> {
 public:
  LstmCell(std::int64_t in, std::int64_t hidden, Rng& rng) : hidden_(hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    w_ih_ = this->register_parameter(
        "weight_ih", init::uniform<T>({4 * hidden, in}, bound, rng));
    w_hh_ = this->register_parameter(
        "weight_hh", init::uniform<T>({4 * hidden, hidden}, bound, rng));
    b_ih_ = this->register_parameter("bias_ih",
                                     init::uniform<T>({4 * hidden}, bound, rng));
    b_hh_ = this->register_parameter("bias_hh",
                                     init::uniform<T>({4 * hidden}, bound, rng));
  }

  std::int64_t hidden_size() const { return hidden_; }

  LstmState<T> zero_state(std::int64_t batch) const {
    return {Var<T>(Tensor<T>({batch, hidden_})),
            Var<T>(Tensor<T>({batch, hidden_}))};
  }

  LstmState<T> operator()(const Var<T>& x, const LstmState<T>& s) const {
    Var<T> gates = add(linear(x, w_ih_, b_ih_), linear(s.h, w_hh_, b_hh_));
    const std::int64_t h = hidden_;
    Var<T> i = sigmoid(slice_cols(gates, 0, h));
    Var<T> f = sigmoid(slice_cols(gates, h, 2 * h));
    Var<T> g = tanh(slice_cols(gates, 2 * h, 3 * h));
    Var<T> o = sigmoid(slice_cols(gates, 3 * h, 4 * h));
    Var<T> c = add(mul(f, s.c), mul(i, g));
    return {mul(o, tanh(c)), c};
  }

 private:
  std::int64_t hidden_;
  Var<T> w_ih_, w_hh_, b_ih_, b_hh_;
};

}  // namespace mipae::nn
