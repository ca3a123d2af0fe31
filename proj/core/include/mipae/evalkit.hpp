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

// Frame-quality metrics, swap grids, the centroid pose oracle, rollout
// evaluation and report files.
//
// Frames are planar (channels, H, W) arrays of doubles in [0, max_val].

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mipae/checkpoint.hpp"
#include "mipae/miest.hpp"
#include "mipae/nets.hpp"
#include "mipae/synthvid.hpp"

namespace mipae::evalkit {

inline constexpr double kPsnrCap = 100.0;

struct FrameShape {
  std::int64_t channels = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t numel() const { return channels * height * width; }
};

// 10 log10(max_val^2 / MSE), or kPsnrCap when the frames are identical.
double psnr(std::span<const double> a, std::span<const double> b, double max_val = 1.0);

// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), constants
// (0.01 L)^2 and (0.03 L)^2, over window positions fully inside the frame,
// averaged over channels. Throws std::invalid_argument for frames smaller
// than the window.
double ssim(std::span<const double> a, std::span<const double> b, FrameShape shape,
            double max_val = 1.0);

class EmptyForegroundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kForegroundThreshold = 0.1;

// Intensity-weighted centroid of the pixels above the threshold, in pixel
// units with pixel (i, j) centred at (j + 0.5, i + 0.5). Channels are
// averaged first.
synthvid::Vec2 centroid_oracle(std::span<const double> frame, FrameShape shape,
                               double threshold = kForegroundThreshold);

// Cell (r, c) = D(E_c(content_frames[r]), E_p(pose_frames[c])).
// Returns (rows, cols, channels, H, W).
nn::Tensor<double> swap_grid(nets::Networks<float>& nets, const nn::Tensor<float>& content_frames,
                             const nn::Tensor<float>& pose_frames);

// Tiles a grid into one image with a header row of pose frames and a
// leading column of content frames; empty tensors omit the header.
void write_grid_png(const std::filesystem::path& path, const nn::Tensor<double>& grid,
                    const nn::Tensor<double>& pose_header = {},
                    const nn::Tensor<double>& content_header = {});

struct SwapFidelity {
  std::vector<double> errors;  // per cell, pixels
  double fraction_within(double px) const;
  double mean() const;
};

// Centroid distance between each grid cell and its pose-source frame.
SwapFidelity swap_fidelity(const nn::Tensor<double>& grid, const nn::Tensor<float>& pose_frames);

struct Curve {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct RolloutReport {
  Curve psnr;
  Curve ssim;
  std::int64_t clips = 0;
  double mean_ssim() const;
  double mean_psnr() const;
};

// Predicts `horizon` frames (channels, H, W each, in [0, 1]) after the first
// `context` frames of a clip.
using Predictor = std::function<nn::Tensor<float>(const synthvid::VideoSequence&, std::int64_t context,
                                                  std::int64_t horizon)>;

// Per-timestep PSNR/SSIM of a predictor against ground truth.
RolloutReport score_rollouts(const synthvid::Dataset& data, std::int64_t context,
                             std::int64_t horizon, const Predictor& predictor);

// Runs the trained predictor on every clip.
RolloutReport evaluate_rollout(const Checkpoint& ckpt, nets::Networks<float>& nets,
                               const synthvid::Dataset& test);

// Long format: metric,timestep,mean,std. LPIPS rows are present with empty
// values so external tools can fill them.
void write_report_csv(const std::filesystem::path& path, const RolloutReport& report);

struct NamedCurve {
  std::string label;
  Curve curve;
};
// Line plot of curves against the prediction step, as SVG.
void write_curve_svg(const std::filesystem::path& path, const std::string& title,
                     const std::string& y_label, const std::vector<NamedCurve>& curves);

// Single-frame probe set for MIG: every content class repeated `repeats`
// times at independent uniform positions. Single-object only.
struct MigProbe {
  miest::FactorSamples factors;
  nn::Tensor<float> frames;  // (n, 1, H, W)
};
MigProbe make_mig_probe(const synthvid::DatasetConfig& cfg, std::int64_t repeats,
                        std::uint64_t seed, int pose_grid = 8);

miest::MigReport model_mig(nets::Networks<float>& nets, const MigProbe& probe, int k = 3);

}  // namespace mipae::evalkit
