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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mipae::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major tensor. Images use NCHW layout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(nn::numel(shape_)), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != nn::numel(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + nn::to_string(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  T& at(std::initializer_list<std::int64_t> index) {
    return data_[offset(index)];
  }
  const T& at(std::initializer_list<std::int64_t> index) const {
    return data_[offset(index)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (nn::numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + nn::to_string(shape_) + " to " +
                       nn::to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  // Rows [begin, end) along the leading axis.
  Tensor rows(std::int64_t begin, std::int64_t end) const {
    const std::int64_t stride = row_stride();
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s),
                  std::vector<T>(data_.begin() + begin * stride,
                                 data_.begin() + end * stride));
  }

  std::int64_t row_stride() const {
    return shape_.empty() || shape_[0] == 0 ? 0 : numel() / shape_[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::int64_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index rank mismatch for shape " + nn::to_string(shape_));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::int64_t i : index) {
      off = off * static_cast<std::size_t>(shape_[axis++]) +
            static_cast<std::size_t>(i);
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

// Stacks equally-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  Shape s{static_cast<std::int64_t>(parts.size())};
  for (auto d : parts.front().shape()) s.push_back(d);
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(numel(s)));
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) {
      throw ShapeError("stack: mismatched shapes " + to_string(p.shape()) +
                       " vs " + to_string(parts.front().shape()));
    }
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor<T>(std::move(s), std::move(data));
}

}  // namespace mipae::nn
