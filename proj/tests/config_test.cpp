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

#include "mipae/checkpoint.hpp"
#include "mipae/config.hpp"
#include "mipae/errors.hpp"
#include "temp_dir.hpp"

namespace mipae {
namespace {

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto c = config_from_yaml("{}");
  EXPECT_EQ(c.loss.alpha, 1.0);
  EXPECT_EQ(c.loss.beta, 0.0001);
  EXPECT_EQ(c.optimizer.lr, 0.002);
  EXPECT_EQ(c.optimizer.beta1, 0.5);
  EXPECT_EQ(c.baseline, Baseline::kMipae);
  EXPECT_EQ(c.net.content_dim, 128);
  EXPECT_EQ(c.net.pose_dim, 5);
  EXPECT_EQ(c.data.context, 5);
  EXPECT_EQ(c.data.horizon, 10);
}

TEST(Config, OmittedKeysKeepDefaults) {
  const auto c = config_from_yaml("net:\n  base_channels: 16\ntrain:\n  batch_size: 8\n");
  EXPECT_EQ(c.net.base_channels, 16);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.loss.alpha, 1.0);
  EXPECT_EQ(c.loss.beta, 0.0001);
  EXPECT_EQ(c.optimizer.lr, 0.002);
}

TEST(Config, UnknownKeyReportsPosition) {
  try {
    config_from_yaml("net:\n  content_dim: 64\n  pose_dims: 3\n", "run.yaml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.yaml:3:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("net.pose_dims"), std::string::npos) << msg;
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(config_from_yaml("net: {pose_dim: abc}"), ConfigError);
  EXPECT_THROW(config_from_yaml("baseline: vae"), ConfigError);
  EXPECT_THROW(config_from_yaml("loss: {beta: -1}"), ConfigError);
  EXPECT_THROW(config_from_yaml("train: {batch_size: 1}"), ConfigError);
  EXPECT_THROW(config_from_yaml("data: {speed_range: [0.1]}"), ConfigError);
  EXPECT_THROW(config_from_yaml("net: [1, 2"), ConfigError);
  EXPECT_THROW(config_from_yaml("loss: {max_offset: 40}"), ConfigError);
}

TEST(Config, YamlRoundTrip) {
  TrainConfig c;
  c.data.num_sequences = 123;
  c.data.speed_range = {0.0125, 0.0875};
  c.data.margin = 0.1;
  c.net.use_skip_connections = true;
  c.loss.beta = 3.3e-5;
  c.optimizer.lr = 1.0 / 3.0;
  c.baseline = Baseline::kDrnet;
  c.seed = 18446744073709551557ull;
  c.eval.test_seed = 77;
  const auto back = config_from_yaml(to_yaml(c));
  EXPECT_EQ(to_yaml(back), to_yaml(c));
  EXPECT_EQ(back.data, c.data);
  EXPECT_EQ(back.loss.beta, c.loss.beta);
  EXPECT_EQ(back.optimizer.lr, c.optimizer.lr);
  EXPECT_EQ(back.baseline, c.baseline);
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_TRUE(back.net.use_skip_connections);
}

TEST(Config, MissingFileIsIoError) {
  EXPECT_THROW(load_config("/nonexistent/cfg.yaml"), IoError);
}

TEST(Config, NoneBaselineZeroesBeta) {
  auto c = config_from_yaml("baseline: none");
  EXPECT_EQ(c.effective_beta(), 0.0);
  c.baseline = Baseline::kMipae;
  EXPECT_EQ(c.effective_beta(), 0.0001);
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    ck.config.net.base_channels = 2;
    ck.config.net.frame_size = ck.config.data.frame_size = 16;
    ck.config.net.content_dim = 6;
    ck.config.net.pose_dim = 2;
    ck.config.net.critic_hidden = 4;
    ck.config.net.lstm_cells = 4;
    auto nets = nets::Networks<float>::build(ck.config.net, 3);
    capture_networks(nets, ck);
    ck.phase1_step = 17;
    ck.rng_state = "1 2 3";
    ck.stats["val_recon"] = 0.1;
    save_checkpoint(ck, path());
  }
  std::filesystem::path path() const { return dir.path() / "m.ckpt"; }
  test::TempDir dir;
  Checkpoint ck;
};

TEST_F(CheckpointFile, RoundTrip) {
  const auto back = load_checkpoint(path());
  EXPECT_EQ(back.groups, ck.groups);
  EXPECT_EQ(back.phase1_step, 17);
  EXPECT_EQ(back.rng_state, "1 2 3");
  EXPECT_EQ(back.stats, ck.stats);
  EXPECT_EQ(back.precision_bytes, 4u);
  EXPECT_EQ(to_yaml(back.config), to_yaml(ck.config));
}

TEST_F(CheckpointFile, RestoredNetworksMatchBitForBit) {
  auto a = nets::Networks<float>::build(ck.config.net, 3);
  auto b = nets::Networks<float>::build(ck.config.net, 4);
  restore_networks(load_checkpoint(path()), b);
  for (std::size_t g = 0; g < a.groups().size(); ++g) {
    const auto pa = a.groups()[g].second->parameters(), pb = b.groups()[g].second->parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].value(), pb[i].value());
  }
}

TEST_F(CheckpointFile, VersionMismatchNamesBothVersions) {
  auto bytes = test::read_bytes(path());
  bytes[8] = 9;
  test::write_bytes(path(), bytes);
  try {
    load_checkpoint(path());
    FAIL() << "expected VersionError";
  } catch (const VersionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('9'), std::string::npos) << msg;
    EXPECT_NE(msg.find('1'), std::string::npos) << msg;
  }
}

TEST_F(CheckpointFile, CorruptionIsDetected) {
  auto bytes = test::read_bytes(path());
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  test::write_bytes(path(), flipped);
  EXPECT_THROW(load_checkpoint(path()), CorruptFileError);
  bytes.resize(bytes.size() - 11);
  test::write_bytes(path(), bytes);
  EXPECT_THROW(load_checkpoint(path()), CorruptFileError);
  bytes[0] = 'X';
  test::write_bytes(path(), bytes);
  EXPECT_THROW(load_checkpoint(path()), CorruptFileError);
}

TEST_F(CheckpointFile, MissingComponentAndShapeMismatch) {
  Checkpoint c = ck;
  c.groups.erase(nets::kPosePredictor);
  auto n = nets::Networks<float>::build(ck.config.net, 3);
  EXPECT_NO_THROW(restore_networks(c, n));
  EXPECT_THROW(restore_networks(c, n, {nets::kPosePredictor}), ConfigError);
  auto wide = ck.config.net;
  wide.pose_dim = 3;
  auto m = nets::Networks<float>::build(wide, 3);
  EXPECT_THROW(restore_networks(ck, m), ConfigError);
}

TEST(CheckpointMissing, IsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

}  // namespace
}  // namespace mipae
