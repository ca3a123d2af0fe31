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

// Procedural moving-sprite videos with known generative factors.
//
// Each clip holds one or two sprites. A sprite's content (shape, scale,
// orientation) is fixed for the whole clip; its position moves with constant
// speed and mirror-reflects off the frame borders. Coordinates are normalized
// to [0, 1]^2 and converted to pixels only when rendering.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mipae/nn/tensor.hpp"

namespace mipae::synthvid {

inline constexpr int kNumShapes = 3;
inline constexpr int kNumScales = 6;
inline constexpr int kNumOrientations = 40;

enum class ShapeKind : int { kSquare = 0, kEllipse = 1, kTriangle = 2 };

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  bool operator==(const Interval&) const = default;
};

// Per-axis reflection bounds.
struct Bounds {
  Interval x;
  Interval y;
};

struct Content {
  int shape_id = 0;
  int scale_id = 0;
  int orient_id = 0;
  bool operator==(const Content&) const = default;
};

struct FactorTrack {
  Content content;
  std::vector<Vec2> positions;   // one per frame
  std::vector<Vec2> velocities;  // velocity state at each frame
  Vec2 velocity() const { return velocities.empty() ? Vec2{} : velocities[0]; }
  bool operator==(const FactorTrack&) const = default;
};

struct DatasetConfig {
  std::int64_t num_sequences = 2000;
  std::int64_t context = 5;
  std::int64_t horizon = 10;
  std::int64_t frame_size = 64;
  std::int64_t num_objects = 1;
  // Shapes are drawn from ids [0, num_shapes).
  std::int64_t num_shapes = kNumShapes;
  Interval speed_range{0.03, 0.08};  // frame fractions per step
  std::uint64_t seed = 0;
  // Fixed distance kept from the border; unset means the sprite's own
  // half-extent along each axis.
  std::optional<double> margin;

  std::int64_t clip_length() const { return context + horizon; }
  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

// key=value lines; round-trips doubles exactly.
std::string to_text(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_text(const std::string& text);

struct VideoSequence {
  std::int64_t length = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 1;
  std::vector<std::uint8_t> pixels;  // (length, height, width, channels)
  std::vector<FactorTrack> tracks;   // one per object
  std::uint64_t seed = 0;

  std::int64_t frame_bytes() const { return height * width * channels; }
  std::span<const std::uint8_t> frame(std::int64_t t) const {
    return {pixels.data() + t * frame_bytes(),
            static_cast<std::size_t>(frame_bytes())};
  }
  bool operator==(const VideoSequence&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<VideoSequence> sequences;
  bool operator==(const Dataset&) const = default;
};

// Moves `pos` by `vel` and mirror-reflects about any crossed bound, negating
// that velocity component, until the position is inside.
struct DynamicsState {
  Vec2 pos;
  Vec2 vel;
};
DynamicsState step_dynamics(Vec2 pos, Vec2 vel, const Bounds& bounds);
DynamicsState step_dynamics(Vec2 pos, Vec2 vel, Interval bounds);

// Axis-aligned half-extent of a sprite (normalized units) for its
// orientation; the triangle is measured from its centroid.
Vec2 sprite_half_extent(const Content& content);
Bounds sprite_bounds(const Content& content, const DatasetConfig& cfg);

struct SpriteState {
  Content content;
  Vec2 pos;
};

// Anti-aliased rasterization (4x4 supersampling) into a (size, size) frame
// with background 0 and foreground 1. Multiple sprites combine by max.
// Throws ConfigError when a sprite would leave the frame.
std::vector<float> render_frame(std::span<const SpriteState> sprites,
                                std::int64_t frame_size);
std::vector<float> render_frame(const SpriteState& sprite,
                                std::int64_t frame_size);

VideoSequence generate_sequence(std::uint64_t seed, const DatasetConfig& cfg);

// Seed of the i-th clip of a dataset.
std::uint64_t sequence_seed(std::uint64_t dataset_seed, std::uint64_t index);
Dataset generate_dataset(const DatasetConfig& cfg);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

// Frames [first, first + count) of a clip as an (count, C, H, W) tensor in
// [0, 1]. Single-channel frames make HWC and CHW coincide; multi-channel
// frames are transposed.
template <typename T>
nn::Tensor<T> frames_tensor(const VideoSequence& seq, std::int64_t first,
                            std::int64_t count) {
  nn::Tensor<T> out({count, seq.channels, seq.height, seq.width});
  const std::int64_t hw = seq.height * seq.width;
  for (std::int64_t f = 0; f < count; ++f) {
    const auto src = seq.frame(first + f);
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t c = 0; c < seq.channels; ++c)
        out[(f * seq.channels + c) * hw + p] =
            static_cast<T>(src[static_cast<std::size_t>(p * seq.channels + c)]) /
            T{255};
  }
  return out;
}

// Discretized factors used for information-theoretic evaluation.
// Content label flattens (shape, scale, orientation) over all objects;
// pose label bins every object's position on a grid x grid lattice.
std::int64_t content_label(std::span<const FactorTrack> tracks);
std::int64_t pose_label(std::span<const FactorTrack> tracks, std::int64_t frame,
                        int grid = 8);

}  // namespace mipae::synthvid
