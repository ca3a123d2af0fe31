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

#include <benchmark/benchmark.h>
#include <malloc.h>

#include <random>

#include "mipae/evalkit.hpp"
#include "mipae/miest.hpp"
#include "mipae/nn/ops.hpp"
#include "mipae/synthvid.hpp"
#include "mipae/trainer.hpp"

namespace {

using namespace mipae;

// Stride-2 4x4 convolution as used by the encoders; args: batch, channels,
// spatial size.
void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::int64_t n = state.range(0), c = state.range(1), s = state.range(2);
  nn::Rng rng(1);
  nn::Var<float> x(nn::init::normal<float>({n, c, s, s}, 0, 1, rng), true);
  nn::Var<float> w(nn::init::normal<float>({2 * c, c, 4, 4}, 0, 0.02, rng), true);
  for (auto _ : state) {
    auto y = nn::conv2d(x, w, nn::Var<float>(), {2, 1});
    auto loss = nn::sum(y);
    nn::backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
    x.zero_grad();
    w.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({32, 16, 32})->Args({32, 64, 16})->Unit(benchmark::kMillisecond);

trainer::MainTrainer<float>* make_trainer(std::int64_t frame, std::int64_t base,
                                          synthvid::Dataset& data) {
  TrainConfig cfg;
  cfg.data.frame_size = cfg.net.frame_size = frame;
  cfg.data.num_sequences = 64;
  cfg.net.base_channels = base;
  data = synthvid::generate_dataset(cfg.data);
  return new trainer::MainTrainer<float>(cfg, data);
}

// One full phase-1 step (batch 32); args: frame size, base channels.
void BM_TrainStep(benchmark::State& state) {
  synthvid::Dataset data;
  std::unique_ptr<trainer::MainTrainer<float>> tr(make_trainer(state.range(0), state.range(1), data));
  for (auto _ : state) benchmark::DoNotOptimize(tr->step().recon);
}
BENCHMARK(BM_TrainStep)->Args({32, 8})->Args({64, 16})->Unit(benchmark::kMillisecond);

// kNN mutual information between a 4-class label and a 2-D sample.
void BM_KnnMi(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<std::int64_t> labels;
  std::vector<double> x;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = g(rng), b = g(rng);
    x.push_back(a);
    x.push_back(b);
    labels.push_back(2 * (a + 0.5 * g(rng) > 0) + (b + 0.5 * g(rng) > 0));
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(miest::knn_mi_discrete_continuous(labels, {x, 2}));
  state.SetComplexityN(n);
}
BENCHMARK(BM_KnnMi)->Arg(5000)->Arg(50000)->Unit(benchmark::kMillisecond);

void BM_Ssim64(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  std::vector<double> a(64 * 64), b(64 * 64);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(evalkit::ssim(a, b, {1, 64, 64}));
}
BENCHMARK(BM_Ssim64);

void BM_GenerateClips(benchmark::State& state) {
  synthvid::DatasetConfig cfg;
  cfg.num_sequences = 100;
  for (auto _ : state) benchmark::DoNotOptimize(synthvid::generate_dataset(cfg).sequences.size());
  state.SetItemsProcessed(state.iterations() * cfg.num_sequences);
}
BENCHMARK(BM_GenerateClips)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
