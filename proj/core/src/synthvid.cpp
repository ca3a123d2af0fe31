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

#include "mipae/synthvid.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "mipae/errors.hpp"

namespace mipae::synthvid {
namespace {

constexpr int kSupersample = 4;

// Sprite half-size in normalized units.
double base_size(int scale_id) { return 0.08 + 0.016 * scale_id; }

double orientation_angle(int orient_id) {
  return 2.0 * std::numbers::pi * orient_id / kNumOrientations;
}

constexpr double kSquareHalfSide = 0.8;   // relative to base size
constexpr double kEllipseMinor = 0.55;    // relative to base size

// Vertices of the equilateral triangle (circumradius = base size) in local
// coordinates.
std::array<Vec2, 3> triangle_vertices(double s) {
  std::array<Vec2, 3> v;
  for (int k = 0; k < 3; ++k) {
    const double a = std::numbers::pi / 2 + 2 * std::numbers::pi * k / 3;
    v[k] = {s * std::cos(a), s * std::sin(a)};
  }
  return v;
}

bool inside_local(ShapeKind kind, double s, double u, double v) {
  switch (kind) {
    case ShapeKind::kSquare: {
      const double h = kSquareHalfSide * s;
      return std::abs(u) <= h && std::abs(v) <= h;
    }
    case ShapeKind::kEllipse: {
      const double a = s, b = kEllipseMinor * s;
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
    case ShapeKind::kTriangle: {
      // Edge normals point away from the vertex they face; inradius s / 2.
      for (int k = 0; k < 3; ++k) {
        const double a = -std::numbers::pi / 2 + 2 * std::numbers::pi * k / 3;
        if (u * std::cos(a) + v * std::sin(a) > 0.5 * s) return false;
      }
      return true;
    }
  }
  return false;
}

void check_content(const Content& c) {
  if (c.shape_id < 0 || c.shape_id >= kNumShapes || c.scale_id < 0 ||
      c.scale_id >= kNumScales || c.orient_id < 0 ||
      c.orient_id >= kNumOrientations) {
    throw ConfigError("sprite factors out of range: shape " +
                      std::to_string(c.shape_id) + ", scale " +
                      std::to_string(c.scale_id) + ", orientation " +
                      std::to_string(c.orient_id));
  }
}

double reflect_axis(double p, double& v, Interval b) {
  // Bounded loop: a step shorter than the interval width needs at most two
  // reflections, but be tolerant of degenerate intervals.
  for (int guard = 0; guard < 64; ++guard) {
    if (p > b.hi) {
      p = 2 * b.hi - p;
      v = -v;
    } else if (p < b.lo) {
      p = 2 * b.lo - p;
      v = -v;
    } else {
      break;
    }
  }
  return p;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void DatasetConfig::validate() const {
  if (num_sequences < 0) throw ConfigError("num_sequences must be >= 0");
  if (context < 1) throw ConfigError("context must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (frame_size < 16) throw ConfigError("frame_size must be >= 16");
  if (num_objects != 1 && num_objects != 2)
    throw ConfigError("num_objects must be 1 or 2");
  // A zero speed range is allowed and produces static clips.
  if (num_shapes < 1 || num_shapes > kNumShapes)
    throw ConfigError("num_shapes must be in [1, 3]");
  if (!(speed_range.lo >= 0.0 && speed_range.lo <= speed_range.hi &&
        speed_range.hi < 0.5)) {
    throw ConfigError("speed_range must satisfy 0 <= lo <= hi < 0.5");
  }
  if (margin && (*margin < 0.0 || *margin >= 0.5))
    throw ConfigError("margin must be in [0, 0.5)");
}

std::string to_text(const DatasetConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "num_sequences=" << cfg.num_sequences << '\n'
     << "context=" << cfg.context << '\n'
     << "horizon=" << cfg.horizon << '\n'
     << "frame_size=" << cfg.frame_size << '\n'
     << "num_objects=" << cfg.num_objects << '\n'
     << "num_shapes=" << cfg.num_shapes << '\n'
     << "speed_min=" << cfg.speed_range.lo << '\n'
     << "speed_max=" << cfg.speed_range.hi << '\n'
     << "seed=" << cfg.seed << '\n';
  if (cfg.margin) {
    os << "margin=" << *cfg.margin << '\n';
  } else {
    os << "margin=auto\n";
  }
  return os.str();
}

DatasetConfig dataset_config_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("dataset config line " + std::to_string(lineno) +
                        ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end())
      throw ConfigError(std::string("dataset config: missing key ") + key);
    return it->second;
  };
  auto as_int = [&](const char* key) {
    const std::string v = take(key);
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError(std::string("dataset config: bad integer for ") + key);
    return out;
  };
  auto as_double = [&](const std::string& v, const char* key) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(key);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(std::string("dataset config: bad number for ") + key);
    }
  };
  DatasetConfig cfg;
  cfg.num_sequences = as_int("num_sequences");
  cfg.context = as_int("context");
  cfg.horizon = as_int("horizon");
  cfg.frame_size = as_int("frame_size");
  cfg.num_objects = as_int("num_objects");
  cfg.num_shapes = as_int("num_shapes");
  cfg.speed_range = {as_double(take("speed_min"), "speed_min"),
                     as_double(take("speed_max"), "speed_max")};
  {
    const std::string v = take("seed");
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), cfg.seed);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError("dataset config: bad integer for seed");
  }
  const std::string m = take("margin");
  if (m != "auto") cfg.margin = as_double(m, "margin");
  return cfg;
}

DynamicsState step_dynamics(Vec2 pos, Vec2 vel, const Bounds& bounds) {
  Vec2 p{pos.x + vel.x, pos.y + vel.y};
  p.x = reflect_axis(p.x, vel.x, bounds.x);
  p.y = reflect_axis(p.y, vel.y, bounds.y);
  return {p, vel};
}

DynamicsState step_dynamics(Vec2 pos, Vec2 vel, Interval bounds) {
  return step_dynamics(pos, vel, Bounds{bounds, bounds});
}

Vec2 sprite_half_extent(const Content& content) {
  check_content(content);
  const double s = base_size(content.scale_id);
  const double th = orientation_angle(content.orient_id);
  const double c = std::abs(std::cos(th)), sn = std::abs(std::sin(th));
  switch (static_cast<ShapeKind>(content.shape_id)) {
    case ShapeKind::kSquare: {
      const double h = kSquareHalfSide * s;
      return {h * (c + sn), h * (c + sn)};
    }
    case ShapeKind::kEllipse: {
      const double a = s, b = kEllipseMinor * s;
      return {std::sqrt(a * a * c * c + b * b * sn * sn),
              std::sqrt(a * a * sn * sn + b * b * c * c)};
    }
    case ShapeKind::kTriangle: {
      Vec2 e;
      for (const Vec2& v : triangle_vertices(s)) {
        const double x = v.x * std::cos(th) - v.y * std::sin(th);
        const double y = v.x * std::sin(th) + v.y * std::cos(th);
        e.x = std::max(e.x, std::abs(x));
        e.y = std::max(e.y, std::abs(y));
      }
      return e;
    }
  }
  return {};
}

Bounds sprite_bounds(const Content& content, const DatasetConfig& cfg) {
  if (cfg.margin) return {{*cfg.margin, 1 - *cfg.margin}, {*cfg.margin, 1 - *cfg.margin}};
  const Vec2 e = sprite_half_extent(content);
  return {{e.x, 1 - e.x}, {e.y, 1 - e.y}};
}

std::vector<float> render_frame(std::span<const SpriteState> sprites,
                                std::int64_t frame_size) {
  if (frame_size < 1) throw ConfigError("frame_size must be positive");
  const auto n = static_cast<std::size_t>(frame_size * frame_size);
  std::vector<float> frame(n, 0.0f);
  const double px = static_cast<double>(frame_size);
  constexpr double kTol = 1e-9;
  for (const SpriteState& sp : sprites) {
    const Vec2 ext = sprite_half_extent(sp.content);
    if (sp.pos.x - ext.x < -kTol || sp.pos.x + ext.x > 1 + kTol ||
        sp.pos.y - ext.y < -kTol || sp.pos.y + ext.y > 1 + kTol) {
      throw ConfigError("sprite extent exceeds the frame at position (" +
                        std::to_string(sp.pos.x) + ", " +
                        std::to_string(sp.pos.y) + ")");
    }
    const auto kind = static_cast<ShapeKind>(sp.content.shape_id);
    const double s = base_size(sp.content.scale_id);
    const double th = orientation_angle(sp.content.orient_id);
    const double ct = std::cos(th), st = std::sin(th);
    const auto lo_x = std::max<std::int64_t>(0, static_cast<std::int64_t>((sp.pos.x - ext.x) * px) - 1);
    const auto hi_x = std::min<std::int64_t>(frame_size - 1, static_cast<std::int64_t>((sp.pos.x + ext.x) * px) + 1);
    const auto lo_y = std::max<std::int64_t>(0, static_cast<std::int64_t>((sp.pos.y - ext.y) * px) - 1);
    const auto hi_y = std::min<std::int64_t>(frame_size - 1, static_cast<std::int64_t>((sp.pos.y + ext.y) * px) + 1);
    for (std::int64_t i = lo_y; i <= hi_y; ++i) {
      for (std::int64_t j = lo_x; j <= hi_x; ++j) {
        int hits = 0;
        for (int a = 0; a < kSupersample; ++a) {
          for (int b = 0; b < kSupersample; ++b) {
            const double x = (j + (b + 0.5) / kSupersample) / px - sp.pos.x;
            const double y = (i + (a + 0.5) / kSupersample) / px - sp.pos.y;
            // Rotate into the sprite frame.
            const double u = x * ct + y * st;
            const double v = -x * st + y * ct;
            hits += inside_local(kind, s, u, v) ? 1 : 0;
          }
        }
        const float cover =
            static_cast<float>(hits) / static_cast<float>(kSupersample * kSupersample);
        auto& dst = frame[static_cast<std::size_t>(i * frame_size + j)];
        dst = std::max(dst, cover);
      }
    }
  }
  return frame;
}

std::vector<float> render_frame(const SpriteState& sprite,
                                std::int64_t frame_size) {
  return render_frame(std::span<const SpriteState>(&sprite, 1), frame_size);
}

VideoSequence generate_sequence(std::uint64_t seed, const DatasetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> shape(0, static_cast<int>(cfg.num_shapes) - 1);
  std::uniform_int_distribution<int> scale(0, kNumScales - 1);
  std::uniform_int_distribution<int> orient(0, kNumOrientations - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::int64_t len = cfg.clip_length();
  VideoSequence seq;
  seq.length = len;
  seq.height = seq.width = cfg.frame_size;
  seq.channels = 1;
  seq.seed = seed;

  std::vector<Bounds> bounds;
  for (std::int64_t o = 0; o < cfg.num_objects; ++o) {
    FactorTrack tr;
    tr.content = {shape(rng), scale(rng), orient(rng)};
    const Bounds b = sprite_bounds(tr.content, cfg);
    Vec2 pos{b.x.lo + unit(rng) * (b.x.hi - b.x.lo),
             b.y.lo + unit(rng) * (b.y.hi - b.y.lo)};
    const double speed = cfg.speed_range.lo +
                         unit(rng) * (cfg.speed_range.hi - cfg.speed_range.lo);
    const double dir = 2.0 * std::numbers::pi * unit(rng);
    Vec2 vel{speed * std::cos(dir), speed * std::sin(dir)};
    tr.positions.push_back(pos);
    tr.velocities.push_back(vel);
    for (std::int64_t t = 1; t < len; ++t) {
      const DynamicsState next = step_dynamics(pos, vel, b);
      pos = next.pos;
      vel = next.vel;
      tr.positions.push_back(pos);
      tr.velocities.push_back(vel);
    }
    seq.tracks.push_back(std::move(tr));
  }

  seq.pixels.resize(static_cast<std::size_t>(len * seq.frame_bytes()));
  std::vector<SpriteState> sprites(seq.tracks.size());
  for (std::int64_t t = 0; t < len; ++t) {
    for (std::size_t o = 0; o < seq.tracks.size(); ++o) {
      sprites[o] = {seq.tracks[o].content,
                    seq.tracks[o].positions[static_cast<std::size_t>(t)]};
    }
    const std::vector<float> f = render_frame(sprites, cfg.frame_size);
    std::uint8_t* dst = seq.pixels.data() + t * seq.frame_bytes();
    for (std::size_t p = 0; p < f.size(); ++p) {
      dst[p] = static_cast<std::uint8_t>(std::lround(f[p] * 255.0f));
    }
  }
  return seq;
}

std::uint64_t sequence_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ index);
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.sequences.reserve(static_cast<std::size_t>(cfg.num_sequences));
  for (std::int64_t i = 0; i < cfg.num_sequences; ++i) {
    ds.sequences.push_back(
        generate_sequence(sequence_seed(cfg.seed, static_cast<std::uint64_t>(i)), cfg));
  }
  return ds;
}

std::int64_t content_label(std::span<const FactorTrack> tracks) {
  std::int64_t label = 0;
  for (const FactorTrack& tr : tracks) {
    const Content& c = tr.content;
    label = label * (kNumShapes * kNumScales * kNumOrientations) +
            (c.shape_id * kNumScales + c.scale_id) * kNumOrientations +
            c.orient_id;
  }
  return label;
}

std::int64_t pose_label(std::span<const FactorTrack> tracks, std::int64_t frame,
                        int grid) {
  std::int64_t label = 0;
  auto bin = [grid](double v) {
    return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(v * grid)),
                                    0, grid - 1);
  };
  for (const FactorTrack& tr : tracks) {
    const Vec2 p = tr.positions.at(static_cast<std::size_t>(frame));
    label = label * grid * grid + bin(p.y) * grid + bin(p.x);
  }
  return label;
}

}  // namespace mipae::synthvid
