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

#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "mipae/errors.hpp"
#include "mipae/synthvid.hpp"
#include "temp_dir.hpp"

namespace mipae::synthvid {
namespace {

// Moves with small sub-steps, reflecting whenever a sub-step leaves the box.
DynamicsState substep_simulator(Vec2 pos, Vec2 vel, Interval b, double dt) {
  const auto n = static_cast<int>(std::lround(1.0 / dt));
  for (int i = 0; i < n; ++i) {
    double* p[2] = {&pos.x, &pos.y};
    double* v[2] = {&vel.x, &vel.y};
    for (int a = 0; a < 2; ++a) {
      *p[a] += *v[a] * dt;
      if (*p[a] > b.hi) {
        *p[a] = 2 * b.hi - *p[a];
        *v[a] = -*v[a];
      } else if (*p[a] < b.lo) {
        *p[a] = 2 * b.lo - *p[a];
        *v[a] = -*v[a];
      }
    }
  }
  return {pos, vel};
}

Vec2 foreground_centroid(const std::vector<float>& f, std::int64_t size) {
  double w = 0, x = 0, y = 0;
  for (std::int64_t i = 0; i < size; ++i)
    for (std::int64_t j = 0; j < size; ++j) {
      const double v = f[i * size + j];
      w += v;
      x += v * (j + 0.5);
      y += v * (i + 0.5);
    }
  return {x / w, y / w};
}

TEST(Dynamics, ZeroVelocityIsFixedPoint) {
  const auto s = step_dynamics({0.5, 0.5}, {0, 0}, Interval{0, 1});
  EXPECT_EQ(s.pos, (Vec2{0.5, 0.5}));
  EXPECT_EQ(s.vel, (Vec2{0, 0}));
}

TEST(Dynamics, ReflectsAtUpperBound) {
  const auto s = step_dynamics({0.95, 0.5}, {0.10, 0}, Interval{0, 1});
  EXPECT_NEAR(s.pos.x, 0.95, 1e-12);
  EXPECT_NEAR(s.pos.y, 0.5, 1e-12);
  EXPECT_EQ(s.vel, (Vec2{-0.10, 0}));
}

TEST(Dynamics, ReflectsBothAxesAtLowerBound) {
  const auto s = step_dynamics({0.02, 0.02}, {-0.05, -0.05}, Interval{0, 1});
  const auto ref = substep_simulator({0.02, 0.02}, {-0.05, -0.05}, Interval{0, 1}, 1e-4);
  EXPECT_NEAR(s.pos.x, ref.pos.x, 1e-6);
  EXPECT_NEAR(s.pos.y, ref.pos.y, 1e-6);
  EXPECT_NEAR(s.pos.x, 0.03, 1e-12);
  EXPECT_NEAR(s.pos.y, 0.03, 1e-12);
  EXPECT_EQ(s.vel, ref.vel);
  EXPECT_EQ(s.vel, (Vec2{0.05, 0.05}));
}

TEST(Dynamics, MatchesSubsteppedSimulatorOnRandomStates) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Interval b{0.2, 0.7};
  for (int i = 0; i < 200; ++i) {
    Vec2 pos{b.lo + u(rng) * (b.hi - b.lo), b.lo + u(rng) * (b.hi - b.lo)};
    Vec2 vel{(u(rng) - 0.5) * 0.4, (u(rng) - 0.5) * 0.4};
    const auto fast = step_dynamics(pos, vel, b);
    const auto ref = substep_simulator(pos, vel, b, 1e-4);
    EXPECT_NEAR(fast.pos.x, ref.pos.x, 1e-3 * std::abs(vel.x) + 1e-9);
    EXPECT_NEAR(fast.pos.y, ref.pos.y, 1e-3 * std::abs(vel.y) + 1e-9);
  }
}

// Larger-than-box velocities need repeated reflection.
TEST(Dynamics, MultipleReflectionsStayInside) {
  const auto s = step_dynamics({0.5, 0.5}, {0.45, -0.45}, Interval{0.4, 0.6});
  EXPECT_GE(s.pos.x, 0.4);
  EXPECT_LE(s.pos.x, 0.6);
  EXPECT_GE(s.pos.y, 0.4);
  EXPECT_LE(s.pos.y, 0.6);
}

TEST(Dynamics, SpeedIsConserved) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Vec2 pos{u(rng), u(rng)}, vel{(u(rng) - 0.5) * 0.3, (u(rng) - 0.5) * 0.3};
    const double speed = std::hypot(vel.x, vel.y);
    for (int t = 0; t < 50; ++t) {
      const auto s = step_dynamics(pos, vel, Interval{0, 1});
      pos = s.pos;
      vel = s.vel;
      EXPECT_DOUBLE_EQ(std::hypot(vel.x, vel.y), speed);
    }
  }
}

TEST(Dynamics, TimeReversible) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Bounds b{{0.1, 0.9}, {0.15, 0.85}};
  for (int i = 0; i < 100; ++i) {
    const Vec2 start{0.1 + 0.8 * u(rng), 0.15 + 0.7 * u(rng)};
    Vec2 pos = start, vel{(u(rng) - 0.5) * 0.6, (u(rng) - 0.5) * 0.6};
    for (int t = 0; t < 200; ++t) {
      const auto s = step_dynamics(pos, vel, b);
      pos = s.pos;
      vel = s.vel;
    }
    vel = {-vel.x, -vel.y};
    for (int t = 0; t < 200; ++t) {
      const auto s = step_dynamics(pos, vel, b);
      pos = s.pos;
      vel = s.vel;
    }
    EXPECT_NEAR(pos.x, start.x, 1e-9);
    EXPECT_NEAR(pos.y, start.y, 1e-9);
  }
}

TEST(Render, CenteredSpriteHasCenteredCentroid) {
  for (int shape = 0; shape < kNumShapes; ++shape) {
    const auto f = render_frame(SpriteState{{shape, 3, 7}, {0.5, 0.5}}, 64);
    const Vec2 c = foreground_centroid(f, 64);
    EXPECT_NEAR(c.x, 32.0, 0.5) << "shape " << shape;
    EXPECT_NEAR(c.y, 32.0, 0.5) << "shape " << shape;
  }
}

TEST(Render, Deterministic) {
  const SpriteState s{{2, 4, 13}, {0.41, 0.58}};
  EXPECT_EQ(render_frame(s, 64), render_frame(s, 64));
}

TEST(Render, ValuesInUnitRange) {
  const auto f = render_frame(SpriteState{{1, 5, 21}, {0.5, 0.5}}, 64);
  for (float v : f) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(*std::max_element(f.begin(), f.end()), 1.0f);
}

TEST(Render, ForegroundGrowsWithScale) {
  for (int shape = 0; shape < kNumShapes; ++shape) {
    // Coverage-weighted count; thresholded counts can tie under 4x4 supersampling.
    double prev = 0;
    std::int64_t prev_touched = 0;
    for (int scale = 0; scale < kNumScales; ++scale) {
      const auto f = render_frame(SpriteState{{shape, scale, 0}, {0.5, 0.5}}, 64);
      const double n = std::accumulate(f.begin(), f.end(), 0.0);
      const auto touched = std::count_if(f.begin(), f.end(), [](float v) { return v > 0.0f; });
      EXPECT_GT(n, prev) << "shape " << shape << " scale " << scale;
      EXPECT_GE(touched, prev_touched) << "shape " << shape << " scale " << scale;
      prev = n;
      prev_touched = touched;
    }
  }
}

TEST(Render, SpriteOutsideFrameIsRejected) {
  EXPECT_THROW(render_frame(SpriteState{{0, 5, 0}, {0.01, 0.5}}, 64), ConfigError);
}

TEST(Render, TwoSpritesComposeByMax) {
  const SpriteState a{{0, 2, 0}, {0.3, 0.3}}, b{{1, 2, 0}, {0.7, 0.7}};
  const std::vector<SpriteState> both{a, b};
  const auto fa = render_frame(a, 64), fb = render_frame(b, 64), fab = render_frame(both, 64);
  for (std::size_t i = 0; i < fab.size(); ++i) EXPECT_EQ(fab[i], std::max(fa[i], fb[i]));
}

TEST(Render, CentroidTracksPositionOnGeneratedClips) {
  DatasetConfig cfg;
  cfg.num_sequences = 20;
  cfg.seed = 17;
  const auto ds = generate_dataset(cfg);
  for (const auto& seq : ds.sequences) {
    const auto& tr = seq.tracks[0];
    for (std::int64_t t = 0; t < seq.length; ++t) {
      const auto f = render_frame(SpriteState{tr.content, tr.positions[t]}, cfg.frame_size);
      const Vec2 c = foreground_centroid(f, cfg.frame_size);
      EXPECT_NEAR(c.x, tr.positions[t].x * cfg.frame_size, 1.0);
      EXPECT_NEAR(c.y, tr.positions[t].y * cfg.frame_size, 1.0);
    }
  }
}

TEST(Generate, SeededDeterminism) {
  DatasetConfig cfg;
  EXPECT_EQ(generate_sequence(0, cfg), generate_sequence(0, cfg));
  EXPECT_NE(generate_sequence(0, cfg), generate_sequence(1, cfg));
}

TEST(Generate, ClipStructure) {
  DatasetConfig cfg;
  cfg.num_objects = 2;
  const auto seq = generate_sequence(42, cfg);
  EXPECT_EQ(seq.length, 15);
  EXPECT_EQ(static_cast<std::int64_t>(seq.pixels.size()), 15 * 64 * 64);
  ASSERT_EQ(seq.tracks.size(), 2u);
  for (const auto& tr : seq.tracks) {
    EXPECT_EQ(static_cast<std::int64_t>(tr.positions.size()), seq.length);
    const auto b = sprite_bounds(tr.content, cfg);
    for (const auto& p : tr.positions) {
      EXPECT_GE(p.x, b.x.lo);
      EXPECT_LE(p.x, b.x.hi);
      EXPECT_GE(p.y, b.y.lo);
      EXPECT_LE(p.y, b.y.hi);
    }
  }
}

TEST(Generate, ConstantSpeedBetweenReflections) {
  DatasetConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto seq = generate_sequence(seed, cfg);
    const auto& tr = seq.tracks[0];
    const double speed = std::hypot(tr.velocity().x, tr.velocity().y);
    EXPECT_GE(speed, cfg.speed_range.lo - 1e-12);
    EXPECT_LE(speed, cfg.speed_range.hi + 1e-12);
    for (std::size_t t = 0; t + 1 < tr.positions.size(); ++t) {
      const bool reflected = tr.velocities[t + 1] != tr.velocities[t];
      if (reflected) continue;
      const double d = std::hypot(tr.positions[t + 1].x - tr.positions[t].x,
                                  tr.positions[t + 1].y - tr.positions[t].y);
      EXPECT_NEAR(d, speed, 1e-12);
    }
  }
}

TEST(Generate, ShapeDistributionIsUniform) {
  DatasetConfig cfg;
  cfg.num_sequences = 1000;
  cfg.seed = 2024;
  cfg.frame_size = 16;
  cfg.context = 1;
  cfg.horizon = 1;
  const auto ds = generate_dataset(cfg);
  std::array<double, kNumShapes> counts{};
  for (const auto& s : ds.sequences) counts[s.tracks[0].content.shape_id] += 1;
  double chi2 = 0;
  const double expected = 1000.0 / kNumShapes;
  for (double c : counts) {
    EXPECT_NEAR(c / 1000.0, 1.0 / kNumShapes, 0.05);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  boost::math::chi_squared dist(kNumShapes - 1);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.001);
}

TEST(Generate, ContentIsConstantWithinClip) {
  DatasetConfig cfg;
  cfg.num_sequences = 30;
  const auto ds = generate_dataset(cfg);
  for (const auto& s : ds.sequences) {
    const auto& tr = s.tracks[0];
    EXPECT_GE(tr.content.shape_id, 0);
    EXPECT_LT(tr.content.shape_id, kNumShapes);
    EXPECT_GE(tr.content.scale_id, 0);
    EXPECT_LT(tr.content.scale_id, kNumScales);
    EXPECT_GE(tr.content.orient_id, 0);
    EXPECT_LT(tr.content.orient_id, kNumOrientations);
  }
}

TEST(Generate, ReproducesFromStoredSeed) {
  DatasetConfig cfg;
  cfg.num_sequences = 5;
  cfg.seed = 77;
  const auto ds = generate_dataset(cfg);
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    EXPECT_EQ(ds.sequences[i].seed, sequence_seed(77, i));
    EXPECT_EQ(generate_sequence(ds.sequences[i].seed, cfg), ds.sequences[i]);
  }
}

TEST(Generate, ZeroSpeedClipsAreStatic) {
  DatasetConfig cfg;
  cfg.speed_range = {0.0, 0.0};
  const auto seq = generate_sequence(3, cfg);
  for (std::int64_t t = 1; t < seq.length; ++t)
    EXPECT_TRUE(std::equal(seq.frame(t).begin(), seq.frame(t).end(), seq.frame(0).begin()));
}

TEST(Config, Validation) {
  DatasetConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.context = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.frame_size = 8;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.speed_range = {0.1, 0.6};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.num_objects = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, TextRoundTrip) {
  DatasetConfig cfg;
  cfg.speed_range = {0.0312345678901234, 0.0799999999999999};
  cfg.margin = 0.123456789012345678;
  cfg.seed = 0xfedcba9876543210ull;
  EXPECT_EQ(dataset_config_from_text(to_text(cfg)), cfg);
  cfg.margin.reset();
  EXPECT_EQ(dataset_config_from_text(to_text(cfg)), cfg);
}

TEST(Labels, PoseBinsAndContentIds) {
  FactorTrack tr;
  tr.content = {2, 5, 39};
  tr.positions = {{0.01, 0.01}, {0.99, 0.99}, {0.5, 0.26}};
  const std::span<const FactorTrack> one(&tr, 1);
  EXPECT_EQ(pose_label(one, 0, 8), 0);
  EXPECT_EQ(pose_label(one, 1, 8), 63);
  EXPECT_EQ(pose_label(one, 2, 8), 2 * 8 + 4);
  EXPECT_EQ(content_label(one), kNumShapes * kNumScales * kNumOrientations - 1);
}

class DatasetFile : public ::testing::Test {
 protected:
  test::TempDir dir;
  Dataset ds = [] {
    DatasetConfig cfg;
    cfg.num_sequences = 4;
    cfg.num_objects = 2;
    cfg.frame_size = 32;
    cfg.seed = 5;
    return generate_dataset(cfg);
  }();
};

TEST_F(DatasetFile, RoundTrip) {
  const auto p = dir.path() / "d.bin";
  write_dataset(ds, p);
  EXPECT_EQ(read_dataset(p), ds);
}

TEST_F(DatasetFile, WriteIsByteDeterministic) {
  write_dataset(ds, dir.path() / "a.bin");
  write_dataset(ds, dir.path() / "b.bin");
  EXPECT_EQ(test::read_bytes(dir.path() / "a.bin"), test::read_bytes(dir.path() / "b.bin"));
}

TEST_F(DatasetFile, TruncatedFileIsCorrupt) {
  const auto p = dir.path() / "d.bin";
  write_dataset(ds, p);
  auto bytes = test::read_bytes(p);
  for (std::size_t keep : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    test::write_bytes(p, {bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)});
    EXPECT_THROW(read_dataset(p), CorruptFileError) << "kept " << keep;
  }
}

TEST_F(DatasetFile, FlippedByteFailsChecksum) {
  const auto p = dir.path() / "d.bin";
  write_dataset(ds, p);
  auto bytes = test::read_bytes(p);
  bytes[bytes.size() / 2] ^= 0x10;
  test::write_bytes(p, bytes);
  EXPECT_THROW(read_dataset(p), CorruptFileError);
}

TEST_F(DatasetFile, UnknownVersionNamesBoth) {
  const auto p = dir.path() / "d.bin";
  write_dataset(ds, p);
  auto bytes = test::read_bytes(p);
  bytes[8] = 7;  // version follows the 8-byte magic
  test::write_bytes(p, bytes);
  try {
    read_dataset(p);
    FAIL() << "expected a version error";
  } catch (const VersionError& e) {
    EXPECT_EQ(e.found(), 7u);
    EXPECT_EQ(e.expected(), kDatasetFormatVersion);
    EXPECT_NE(std::string(e.what()).find("found version 7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("expected version 1"), std::string::npos);
  }
}

TEST_F(DatasetFile, MissingFileIsIoError) {
  EXPECT_THROW(read_dataset(dir.path() / "absent.bin"), IoError);
}

}  // namespace
}  // namespace mipae::synthvid
