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

// Central finite differences against the autograd engine, in double precision.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mipae/nn/autograd.hpp"
#include "mipae/nn/ops.hpp"

namespace mipae::testing {

using nn::Tensor;
using nn::Var;

// Fixed random projection turning any output into a scalar.
inline Var<double> project(const Var<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor<double> r(out.shape());
  for (std::int64_t i = 0; i < r.numel(); ++i) r[i] = d(rng);
  return nn::sum(nn::mul(out, Var<double>(r)));
}

// Returns the worst norm-wise relative error ||g_analytic - g_numeric|| /
// max(||g_analytic||, ||g_numeric||) across `wrt`, probing at most
// `max_coords` coordinates per tensor.
inline double gradient_error(const std::function<Var<double>()>& loss,
                             std::vector<Var<double>> wrt, double eps = 1e-6,
                             int max_coords = 24, std::uint64_t seed = 7) {
  for (auto& v : wrt) v.zero_grad();
  Var<double> l = loss();
  nn::backward(l);
  std::vector<Tensor<double>> analytic;
  for (auto& v : wrt) {
    analytic.push_back(v.grad().shape() == v.shape() ? v.grad()
                                                     : Tensor<double>(v.shape()));
  }
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor<double>& x = wrt[k].mutable_value();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
    for (std::int64_t i = 0; i < x.numel(); ++i) coords[i] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    if (static_cast<int>(coords.size()) > max_coords) coords.resize(max_coords);
    double diff2 = 0, a2 = 0, n2 = 0;
    for (auto i : coords) {
      const double orig = x[i];
      x[i] = orig + eps;
      const double up = loss().item();
      x[i] = orig - eps;
      const double down = loss().item();
      x[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

}  // namespace mipae::testing
