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

#include "mipae/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace mipae {

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::kMipae: return "mipae";
    case Baseline::kDrnet: return "drnet";
    case Baseline::kNone: return "none";
  }
  return "mipae";
}

Baseline baseline_from_string(const std::string& s) {
  if (s == "mipae") return Baseline::kMipae;
  if (s == "drnet") return Baseline::kDrnet;
  if (s == "none") return Baseline::kNone;
  throw ConfigError("unknown baseline '" + s + "' (expected mipae, drnet or none)");
}

void TrainConfig::validate() const {
  data.validate();
  net.validate();
  if (net.frame_size != data.frame_size)
    throw ConfigError("network frame_size differs from dataset frame_size");
  loss.validate(data.clip_length());
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (steps_phase1 < 0 || steps_phase2 < 0)
    throw ConfigError("step budgets must be >= 0");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
  if (critic_steps_per_main_step < 1)
    throw ConfigError("critic_steps_per_main_step must be >= 1");
  if (!(cross_recon_prob >= 0.0 && cross_recon_prob <= 1.0))
    throw ConfigError("cross_recon_prob must be in [0, 1]");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must be in [0, 1)");
  if (!(lstm_grad_clip >= 0.0)) throw ConfigError("lstm_grad_clip must be >= 0");
  if (!(optimizer.lr > 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.eps > 0.0))
    throw ConfigError("optimizer constants out of range");
  if (eval.test_sequences < 1 || eval.mig_repeats < 1 || eval.mig_neighbors < 1 ||
      eval.pose_grid < 1 || eval.swap_rows < 1)
    throw ConfigError("eval settings must be positive");
  if (eval.mig_repeats < eval.mig_neighbors + 1)
    throw ConfigError("eval.mig_repeats must exceed eval.mig_neighbors");
}

namespace {

class Section {
 public:
  Section(const YAML::Node& node, std::string path, const std::string& source)
      : node_(node), path_(std::move(path)), source_(source) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      fail(node_, "expected a mapping");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_[key] = true;
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      out = v.as<V>();
    } catch (const YAML::Exception&) {
      fail(v, "bad value for '" + qualified(key) + "'");
    }
  }

  void get_interval(const char* key, synthvid::Interval& out) {
    seen_[key] = true;
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (!v.IsSequence() || v.size() != 2)
      fail(v, "'" + qualified(key) + "' must be a two-element list [lo, hi]");
    try {
      out = {v[0].as<double>(), v[1].as<double>()};
    } catch (const YAML::Exception&) {
      fail(v, "bad value for '" + qualified(key) + "'");
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_[key] = true;
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (v.IsScalar() && v.Scalar() == "auto") {
      out.reset();
      return;
    }
    try {
      out = v.as<double>();
    } catch (const YAML::Exception&) {
      fail(v, "bad value for '" + qualified(key) + "'");
    }
  }

  Section child(const char* key) {
    seen_[key] = true;
    return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), qualified(key),
                   source_);
  }

  // Rejects keys that no getter asked for.
  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) fail(kv.first, "unknown key '" + qualified(key) + "'");
    }
  }

 private:
  std::string qualified(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }
  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const auto mark = at.Mark();
    std::string where = source_;
    if (mark.line >= 0)
      where += ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
    throw ConfigError(where + ": " + msg);
  }

  YAML::Node node_;
  std::string path_;
  const std::string& source_;
  std::map<std::string, bool> seen_;
};

}  // namespace

TrainConfig config_from_yaml(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ":" +
                      std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  TrainConfig cfg;
  Section top(root, "", source);
  top.get("seed", cfg.seed);
  std::string baseline = to_string(cfg.baseline);
  top.get("baseline", baseline);

  Section data = top.child("data");
  data.get("num_sequences", cfg.data.num_sequences);
  data.get("context", cfg.data.context);
  data.get("horizon", cfg.data.horizon);
  data.get("frame_size", cfg.data.frame_size);
  data.get("num_objects", cfg.data.num_objects);
  data.get("num_shapes", cfg.data.num_shapes);
  data.get_interval("speed_range", cfg.data.speed_range);
  data.get("seed", cfg.data.seed);
  data.get_optional("margin", cfg.data.margin);
  data.finish();

  Section net = top.child("net");
  net.get("content_dim", cfg.net.content_dim);
  net.get("pose_dim", cfg.net.pose_dim);
  net.get("base_channels", cfg.net.base_channels);
  net.get("use_skip_connections", cfg.net.use_skip_connections);
  net.get("critic_hidden", cfg.net.critic_hidden);
  net.get("critic_layers", cfg.net.critic_layers);
  net.get("lstm_cells", cfg.net.lstm_cells);
  net.get("lstm_layers", cfg.net.lstm_layers);
  net.finish();
  cfg.net.frame_size = cfg.data.frame_size;

  Section loss = top.child("loss");
  loss.get("alpha", cfg.loss.alpha);
  loss.get("beta", cfg.loss.beta);
  loss.get("max_offset", cfg.loss.max_offset);
  loss.get("exp_clamp", cfg.loss.exp_clamp);
  loss.finish();

  Section opt = top.child("optimizer");
  opt.get("lr", cfg.optimizer.lr);
  opt.get("beta1", cfg.optimizer.beta1);
  opt.get("beta2", cfg.optimizer.beta2);
  opt.get("eps", cfg.optimizer.eps);
  opt.finish();

  Section train = top.child("train");
  train.get("batch_size", cfg.batch_size);
  train.get("steps_phase1", cfg.steps_phase1);
  train.get("steps_phase2", cfg.steps_phase2);
  train.get("checkpoint_interval", cfg.checkpoint_interval);
  train.get("critic_steps_per_main_step", cfg.critic_steps_per_main_step);
  train.get("cross_recon_prob", cfg.cross_recon_prob);
  train.get("validation_fraction", cfg.validation_fraction);
  train.get("lstm_grad_clip", cfg.lstm_grad_clip);
  train.finish();

  Section eval = top.child("eval");
  eval.get("test_sequences", cfg.eval.test_sequences);
  eval.get("test_seed", cfg.eval.test_seed);
  eval.get("mig_repeats", cfg.eval.mig_repeats);
  eval.get("mig_neighbors", cfg.eval.mig_neighbors);
  eval.get("pose_grid", cfg.eval.pose_grid);
  eval.get("swap_rows", cfg.eval.swap_rows);
  eval.finish();
  top.finish();

  try {
    cfg.baseline = baseline_from_string(baseline);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_yaml(ss.str(), path.string());
}

std::string to_yaml(const TrainConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::Key << "baseline" << YAML::Value << to_string(cfg.baseline);

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "num_sequences" << YAML::Value << cfg.data.num_sequences;
  out << YAML::Key << "context" << YAML::Value << cfg.data.context;
  out << YAML::Key << "horizon" << YAML::Value << cfg.data.horizon;
  out << YAML::Key << "frame_size" << YAML::Value << cfg.data.frame_size;
  out << YAML::Key << "num_objects" << YAML::Value << cfg.data.num_objects;
  out << YAML::Key << "num_shapes" << YAML::Value << cfg.data.num_shapes;
  out << YAML::Key << "speed_range" << YAML::Value << YAML::Flow << YAML::BeginSeq
      << cfg.data.speed_range.lo << cfg.data.speed_range.hi << YAML::EndSeq;
  out << YAML::Key << "seed" << YAML::Value << cfg.data.seed;
  out << YAML::Key << "margin" << YAML::Value;
  if (cfg.data.margin) {
    out << *cfg.data.margin;
  } else {
    out << "auto";
  }
  out << YAML::EndMap;

  out << YAML::Key << "net" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "content_dim" << YAML::Value << cfg.net.content_dim;
  out << YAML::Key << "pose_dim" << YAML::Value << cfg.net.pose_dim;
  out << YAML::Key << "base_channels" << YAML::Value << cfg.net.base_channels;
  out << YAML::Key << "use_skip_connections" << YAML::Value << cfg.net.use_skip_connections;
  out << YAML::Key << "critic_hidden" << YAML::Value << cfg.net.critic_hidden;
  out << YAML::Key << "critic_layers" << YAML::Value << cfg.net.critic_layers;
  out << YAML::Key << "lstm_cells" << YAML::Value << cfg.net.lstm_cells;
  out << YAML::Key << "lstm_layers" << YAML::Value << cfg.net.lstm_layers;
  out << YAML::EndMap;

  out << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "alpha" << YAML::Value << cfg.loss.alpha;
  out << YAML::Key << "beta" << YAML::Value << cfg.loss.beta;
  out << YAML::Key << "max_offset" << YAML::Value << cfg.loss.max_offset;
  out << YAML::Key << "exp_clamp" << YAML::Value << cfg.loss.exp_clamp;
  out << YAML::EndMap;

  out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "lr" << YAML::Value << cfg.optimizer.lr;
  out << YAML::Key << "beta1" << YAML::Value << cfg.optimizer.beta1;
  out << YAML::Key << "beta2" << YAML::Value << cfg.optimizer.beta2;
  out << YAML::Key << "eps" << YAML::Value << cfg.optimizer.eps;
  out << YAML::EndMap;

  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "batch_size" << YAML::Value << cfg.batch_size;
  out << YAML::Key << "steps_phase1" << YAML::Value << cfg.steps_phase1;
  out << YAML::Key << "steps_phase2" << YAML::Value << cfg.steps_phase2;
  out << YAML::Key << "checkpoint_interval" << YAML::Value << cfg.checkpoint_interval;
  out << YAML::Key << "critic_steps_per_main_step" << YAML::Value
      << cfg.critic_steps_per_main_step;
  out << YAML::Key << "cross_recon_prob" << YAML::Value << cfg.cross_recon_prob;
  out << YAML::Key << "validation_fraction" << YAML::Value << cfg.validation_fraction;
  out << YAML::Key << "lstm_grad_clip" << YAML::Value << cfg.lstm_grad_clip;
  out << YAML::EndMap;

  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "test_sequences" << YAML::Value << cfg.eval.test_sequences;
  out << YAML::Key << "test_seed" << YAML::Value << cfg.eval.test_seed;
  out << YAML::Key << "mig_repeats" << YAML::Value << cfg.eval.mig_repeats;
  out << YAML::Key << "mig_neighbors" << YAML::Value << cfg.eval.mig_neighbors;
  out << YAML::Key << "pose_grid" << YAML::Value << cfg.eval.pose_grid;
  out << YAML::Key << "swap_rows" << YAML::Value << cfg.eval.swap_rows;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace mipae
