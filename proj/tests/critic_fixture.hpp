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

// Synthetic pose pairs and a standalone critic trainer shared by the
// objective tests and the acceptance checks.

#pragma once

#include <cmath>
#include <memory>
#include <random>

#include "grad_check.hpp"
#include "mipae/nets.hpp"
#include "mipae/nn/adam.hpp"
#include "mipae/objectives.hpp"

namespace mipae::testing {

// Pairs (x, y) with corr(x_0, y_0) = rho and every other coordinate
// independent standard normal. Marginal rows pair x_i with y_{i+1}.
template <typename T = double>
objectives::PairBatch<T> gaussian_pairs(double rho, std::int64_t n, std::int64_t dim,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor<T> x({n, dim}), y({n, dim});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t d = 0; d < dim; ++d) {
      const double a = g(rng), b = g(rng);
      x[i * dim + d] = static_cast<T>(a);
      y[i * dim + d] = static_cast<T>(d == 0 ? rho * a + std::sqrt(1 - rho * rho) * b : b);
    }
  std::vector<std::int64_t> partner(static_cast<std::size_t>(n)), offsets(partner.size(), 1);
  for (std::int64_t i = 0; i < n; ++i) partner[i] = (i + 1) % n;
  return objectives::make_pair_batch(Var<T>(x), Var<T>(y), partner, offsets);
}

template <typename T>
void perturb(nn::Module<T>& m, double amount) {
  for (auto& p : m.parameters()) {
    auto& v = p.mutable_value();
    for (std::int64_t i = 0; i < v.numel(); ++i)
      v[i] += static_cast<T>(amount * std::sin(0.7 * static_cast<double>(i) + 0.3));
  }
}

// Squared gradient norm summed over parameters; missing gradients count 0.
template <typename T>
double grad_norm(const std::vector<Var<T>>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    const auto& g = p.grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) s += static_cast<double>(g[i]) * g[i];
  }
  return s;
}

struct CriticRun {
  std::unique_ptr<nets::Critic<float>> critic;
  double bound = 0.0;      // mi_lower_bound on a fresh evaluation sample
  double objective = 0.0;  // critic objective on the same sample
};

// Trains a default-size single-precision critic by ascent on the
// discriminator objective with fresh pairs every step, then evaluates on
// 20000 new pairs.
inline CriticRun train_critic(double rho, int steps, std::uint64_t seed,
                              std::int64_t batch = 256) {
  nets::NetConfig cfg;
  nn::Rng init(seed);
  CriticRun run;
  run.critic = std::make_unique<nets::Critic<float>>(cfg, init);
  nn::Adam<float> opt(run.critic->parameters(), nn::AdamOptions{});
  for (int s = 0; s < steps; ++s) {
    const auto b = gaussian_pairs<float>(rho, batch, cfg.pose_dim, seed * 1000003 + s + 1);
    opt.zero_grad();
    auto loss = nn::scale(objectives::critic_objective(*run.critic, b), -1.0f);
    nn::backward(loss);
    opt.step();
  }
  const auto eval = gaussian_pairs<float>(rho, 20000, cfg.pose_dim, seed ^ 0x5eed5eedull);
  nn::NoGradGuard no_grad;
  run.bound = objectives::mi_lower_bound(*run.critic, eval).item();
  run.objective = objectives::critic_objective(*run.critic, eval).item();
  return run;
}

}  // namespace mipae::testing
