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

#include "mipae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mipae::trainer {

using nn::Tensor;
using nn::Var;

namespace {

template <typename T>
std::vector<Var<T>> params_of(std::initializer_list<nn::Module<T>*> modules) {
  std::vector<Var<T>> out;
  for (auto* m : modules)
    for (auto& p : m->parameters()) out.push_back(p);
  return out;
}

// Restores a module's training flag on scope exit.
template <typename T>
class ModeGuard {
 public:
  ModeGuard(nn::Module<T>& m, bool training) : m_(m), prev_(m.training()) {
    m_.set_training(training);
  }
  ~ModeGuard() { m_.set_training(prev_); }

 private:
  nn::Module<T>& m_;
  bool prev_;
};

std::vector<std::int64_t> choose_distinct(std::mt19937_64& rng,
                                          const std::vector<std::int64_t>& pool,
                                          std::int64_t count) {
  std::vector<std::int64_t> v = pool;
  for (std::int64_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::int64_t> d(i, static_cast<std::int64_t>(v.size()) - 1);
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(d(rng))]);
  }
  v.resize(static_cast<std::size_t>(count));
  return v;
}

// Copies frame `f` of clip `seq` into `dst` as (channels, H, W) in [0, 1].
template <typename T>
void copy_frame(const synthvid::VideoSequence& seq, std::int64_t f, T* dst) {
  const auto src = seq.frame(f);
  const std::int64_t hw = seq.height * seq.width;
  for (std::int64_t p = 0; p < hw; ++p)
    for (std::int64_t c = 0; c < seq.channels; ++c)
      dst[c * hw + p] = static_cast<T>(src[static_cast<std::size_t>(p * seq.channels + c)]) /
                        T{255};
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::vector<std::int64_t> training_clips(std::int64_t n, double validation_fraction) {
  const auto held = static_cast<std::int64_t>(std::llround(n * validation_fraction));
  std::vector<std::int64_t> v(static_cast<std::size_t>(std::max<std::int64_t>(0, n - held)));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<std::int64_t> validation_clips(std::int64_t n, double validation_fraction) {
  const auto held = static_cast<std::int64_t>(std::llround(n * validation_fraction));
  std::vector<std::int64_t> v;
  for (std::int64_t i = std::max<std::int64_t>(0, n - held); i < n; ++i) v.push_back(i);
  return v;
}

void write_loss_header(std::ostream& os) { os << "step,L_recon,L_sim,L_MI,L_C\n"; }

void write_loss_row(std::ostream& os, const LossRecord& r) {
  os << r.step << ',' << std::setprecision(9) << r.recon << ',' << r.sim << ',' << r.mi
     << ',' << r.critic << '\n';
}

// ---------------------------------------------------------------------------
// Phase 1

template <typename T>
MainTrainer<T>::MainTrainer(const TrainConfig& cfg, const synthvid::Dataset& data,
                            std::vector<std::int64_t> clips)
    : cfg_(cfg), data_(data), clips_(std::move(clips)), rng_(cfg.seed) {
  cfg_.validate();
  if (clips_.size() < 2) throw ConfigError("training needs at least two clips");
  for (std::int64_t c : clips_)
    if (c < 0 || c >= static_cast<std::int64_t>(data_.sequences.size()))
      throw ConfigError("training clip index out of range");
  const std::int64_t len = data_.sequences.at(static_cast<std::size_t>(clips_[0])).length;
  max_offset_ = cfg_.loss.resolved_max_offset(cfg_.data.clip_length());
  if (len < max_offset_ + 1)
    throw ConfigError("clips of length " + std::to_string(len) +
                      " are too short for offset K=" + std::to_string(max_offset_));
  const auto& s0 = data_.sequences[static_cast<std::size_t>(clips_[0])];
  if (s0.height != cfg_.net.frame_size || s0.width != cfg_.net.frame_size ||
      s0.channels != cfg_.net.channels)
    throw ConfigError("dataset frames do not match the network configuration");
  nets_ = nets::Networks<T>::build(cfg_.net, cfg_.seed);
  nets_.set_training(true);
  main_opt_ = std::make_unique<nn::Adam<T>>(
      params_of<T>({nets_.content_encoder.get(), nets_.pose_encoder.get(), nets_.decoder.get()}),
      cfg_.optimizer);
  critic_opt_ = std::make_unique<nn::Adam<T>>(nets_.critic->parameters(), cfg_.optimizer);
}

template <typename T>
MainTrainer<T>::MainTrainer(const TrainConfig& cfg, const synthvid::Dataset& data)
    : MainTrainer(cfg, data,
                  training_clips(static_cast<std::int64_t>(data.sequences.size()),
                                 cfg.validation_fraction)) {}

template <typename T>
Batch MainTrainer<T>::sample_batch() {
  const std::int64_t b =
      std::min<std::int64_t>(cfg_.batch_size, static_cast<std::int64_t>(clips_.size()));
  Batch batch;
  batch.clips = choose_distinct(rng_, clips_, b);
  std::uniform_int_distribution<std::int64_t> other(0, b - 2);
  std::uniform_int_distribution<std::int64_t> kmi(1, max_offset_);
  std::uniform_int_distribution<std::int64_t> ksim(0, max_offset_);
  std::bernoulli_distribution cross(cfg_.cross_recon_prob);
  for (std::int64_t i = 0; i < b; ++i) {
    std::int64_t j = other(rng_);
    if (j >= i) ++j;
    batch.partner.push_back(j);
    const std::int64_t km = kmi(rng_), ks = ksim(rng_);
    const std::int64_t len = data_.sequences[static_cast<std::size_t>(batch.clips[i])].length;
    std::uniform_int_distribution<std::int64_t> t0(0, len - 1 - std::max(km, ks));
    batch.t.push_back(t0(rng_));
    batch.k_mi.push_back(km);
    batch.k_sim.push_back(ks);
    batch.cross.push_back(cross(rng_) ? 1 : 0);
  }
  return batch;
}

template <typename T>
Tensor<T> MainTrainer<T>::gather_frames(const std::vector<std::int64_t>& clips,
                                        const std::vector<std::int64_t>& frames) const {
  const std::int64_t c = cfg_.net.channels, s = cfg_.net.frame_size;
  const auto n = static_cast<std::int64_t>(clips.size());
  Tensor<T> out({n, c, s, s});
  const std::int64_t stride = c * s * s;
  for (std::int64_t i = 0; i < n; ++i)
    copy_frame(data_.sequences[static_cast<std::size_t>(clips[i])], frames[i],
               out.data() + i * stride);
  return out;
}

template <typename T>
typename MainTrainer<T>::Forward MainTrainer<T>::forward(const Batch& batch) {
  const auto b = static_cast<std::int64_t>(batch.clips.size());
  std::vector<std::int64_t> f_t = batch.t, f_sim(b), f_mi(b);
  for (std::int64_t i = 0; i < b; ++i) {
    f_sim[i] = batch.t[i] + batch.k_sim[i];
    f_mi[i] = batch.t[i] + batch.k_mi[i];
  }
  const Var<T> x_t(gather_frames(batch.clips, f_t));
  const Var<T> x_sim(gather_frames(batch.clips, f_sim));
  const Var<T> x_mi(gather_frames(batch.clips, f_mi));

  auto content = nets_.content_encoder->forward(nn::concat<T>({x_t, x_sim}, 0));
  const Var<T> c_t = nn::slice_rows(content.code, 0, b);
  const Var<T> c_sim = nn::slice_rows(content.code, b, 2 * b);
  const Var<T> poses = (*nets_.pose_encoder)(nn::concat<T>({x_t, x_mi}, 0));
  const Var<T> p_t = nn::slice_rows(poses, 0, b);
  const Var<T> p_mi = nn::slice_rows(poses, b, 2 * b);

  std::vector<std::int64_t> pick(static_cast<std::size_t>(b));
  Tensor<T> target(x_t.shape());
  const std::int64_t stride = x_t.value().row_stride();
  for (std::int64_t i = 0; i < b; ++i) {
    pick[i] = batch.cross[i] ? b + i : i;
    const Tensor<T>& src = batch.cross[i] ? x_mi.value() : x_t.value();
    std::copy_n(src.data() + i * stride, stride, target.data() + i * stride);
  }
  std::vector<Var<T>> skips;
  if (cfg_.net.use_skip_connections)
    for (const auto& f : content.features) skips.push_back(nn::slice_rows(f, 0, b));
  const Var<T> decoded =
      nets_.decoder->forward(c_t, nn::gather_rows(poses, pick), skips);

  Forward fwd;
  fwd.batch = batch;
  fwd.recon = objectives::recon_loss(decoded, Var<T>(std::move(target)));
  fwd.sim = objectives::sim_loss(c_t, c_sim);
  fwd.pairs = objectives::make_pair_batch(p_t, p_mi, batch.partner, batch.k_mi);
  for (std::int64_t i = 0; i < b; ++i) fwd.pairs.joint_clip[i] = batch.clips[i];
  for (std::int64_t i = 0; i < b; ++i) {
    fwd.pairs.marginal_first[i] = batch.clips[i];
    fwd.pairs.marginal_second[i] = batch.clips[static_cast<std::size_t>(batch.partner[i])];
  }
  return fwd;
}

template <typename T>
double MainTrainer<T>::critic_step(const Forward& fwd) {
  critic_opt_->zero_grad();
  const Var<T> obj = objectives::critic_objective(*nets_.critic, fwd.pairs);
  const double value = static_cast<double>(obj.item());
  if (!finite(value)) {
    LossRecord rec;
    rec.step = steps_ + 1;
    rec.critic = value;
    check_finite(fwd, rec);
  }
  nn::backward(nn::scale(obj, T{-1}));
  critic_opt_->step();
  critic_opt_->zero_grad();
  return value;
}

template <typename T>
LossRecord MainTrainer<T>::main_step(const Forward& fwd, double critic_value) {
  Var<T> third;
  if (cfg_.baseline == Baseline::kDrnet) {
    third = objectives::adversarial_pose_loss(*nets_.critic, fwd.pairs).enc_loss;
  } else {
    third = objectives::mi_lower_bound(*nets_.critic, fwd.pairs, cfg_.loss.exp_clamp);
  }
  objectives::LossWeights w = cfg_.loss;
  w.beta = cfg_.effective_beta();
  const Var<T> total = objectives::main_objective(fwd.recon, fwd.sim, third, w);

  LossRecord rec;
  rec.step = steps_ + 1;
  rec.recon = static_cast<double>(fwd.recon.item());
  rec.sim = static_cast<double>(fwd.sim.item());
  rec.mi = static_cast<double>(third.item());
  rec.critic = critic_value;
  check_finite(fwd, rec);

  main_opt_->zero_grad();
  nn::backward(total);
  main_opt_->step();
  main_opt_->zero_grad();
  ++steps_;
  return rec;
}

template <typename T>
LossRecord MainTrainer<T>::step() {
  const Forward fwd = forward(sample_batch());
  double critic_value = 0.0;
  for (std::int64_t i = 0; i < cfg_.critic_steps_per_main_step; ++i)
    critic_value = critic_step(fwd);
  return main_step(fwd, critic_value);
}

template <typename T>
void MainTrainer<T>::check_finite(const Forward& fwd, const LossRecord& rec) const {
  if (finite(rec.recon) && finite(rec.sim) && finite(rec.mi) && finite(rec.critic)) return;
  const std::filesystem::path dir = dump_dir.empty() ? std::filesystem::path(".") : dump_dir;
  std::filesystem::create_directories(dir);
  const auto path = dir / ("nonfinite_step" + std::to_string(rec.step) + ".txt");
  std::ofstream out(path);
  out << std::setprecision(17);
  out << "step " << rec.step << "\nL_recon " << rec.recon << "\nL_sim " << rec.sim
      << "\nL_MI " << rec.mi << "\nL_C " << rec.critic << '\n';
  out << "row,clip,clip_seed,t,k_mi,k_sim,cross,partner\n";
  const Batch& b = fwd.batch;
  for (std::size_t i = 0; i < b.clips.size(); ++i) {
    out << i << ',' << b.clips[i] << ','
        << data_.sequences[static_cast<std::size_t>(b.clips[i])].seed << ',' << b.t[i] << ','
        << b.k_mi[i] << ',' << b.k_sim[i] << ',' << int(b.cross[i]) << ',' << b.partner[i]
        << '\n';
  }
  out << "joint_pairs\n";
  const auto& j = fwd.pairs.joint.value();
  for (std::int64_t r = 0; r < j.dim(0); ++r) {
    for (std::int64_t c = 0; c < j.dim(1); ++c) out << (c ? "," : "") << j[r * j.dim(1) + c];
    out << '\n';
  }
  throw NumericError("non-finite loss at step " + std::to_string(rec.step) +
                     "; batch dumped to " + path.string());
}

template <typename T>
double MainTrainer<T>::reconstruction_mse(const std::vector<std::int64_t>& clips) {
  if (clips.empty()) return 0.0;
  nn::NoGradGuard no_grad;
  std::vector<std::int64_t> cl, fr;
  for (std::int64_t c : clips)
    for (std::int64_t f = 0; f < data_.sequences[static_cast<std::size_t>(c)].length; ++f) {
      cl.push_back(c);
      fr.push_back(f);
    }
  const Tensor<T> frames = gather_frames(cl, fr);
  const Tensor<T> pose = encode(*nets_.pose_encoder, frames);
  const Tensor<T> out = decode_with(nets_, frames, pose);
  double acc = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double d = static_cast<double>(out[i]) - static_cast<double>(frames[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(out.numel());
}

template <typename T>
std::string MainTrainer<T>::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

template <typename T>
Checkpoint MainTrainer<T>::checkpoint() {
  Checkpoint ck;
  ck.config = cfg_;
  capture_networks(nets_, ck);
  ck.phase1_step = steps_;
  ck.rng_state = rng_state();
  return ck;
}

template <typename T>
TrainResult train_main(const synthvid::Dataset& data, const TrainConfig& cfg,
                       const TrainOptions& opts) {
  const auto n = static_cast<std::int64_t>(data.sequences.size());
  MainTrainer<T> tr(cfg, data, training_clips(n, cfg.validation_fraction));
  const auto val = validation_clips(n, cfg.validation_fraction);
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    tr.dump_dir = opts.out_dir;
  }
  std::ofstream file_log;
  std::ostream* log = opts.log;
  if (!log && !opts.out_dir.empty()) {
    file_log.open(opts.out_dir / "train_log.csv");
    log = &file_log;
  }
  if (log) write_loss_header(*log);

  TrainResult res;
  res.best_validation = std::numeric_limits<double>::infinity();
  double ema[4] = {0, 0, 0, 0};
  auto annotate = [&](Checkpoint& ck) {
    ck.stats["ema_recon"] = ema[0];
    ck.stats["ema_sim"] = ema[1];
    ck.stats["ema_mi"] = ema[2];
    ck.stats["ema_critic"] = ema[3];
  };
  for (std::int64_t s = 1; s <= cfg.steps_phase1; ++s) {
    const LossRecord rec = tr.step();
    const double v[4] = {rec.recon, rec.sim, rec.mi, rec.critic};
    for (int i = 0; i < 4; ++i) ema[i] = s == 1 ? v[i] : 0.99 * ema[i] + 0.01 * v[i];
    res.history.push_back(rec);
    if (log) write_loss_row(*log, rec);
    if (opts.on_step) opts.on_step(rec);
    const bool last = s == cfg.steps_phase1;
    if (!val.empty() && (s % opts.validation_interval == 0 || last)) {
      const double mse = tr.reconstruction_mse(val);
      if (mse < res.best_validation) {
        res.best_validation = mse;
        res.best = tr.checkpoint();
        res.best.stats["val_recon"] = mse;
        annotate(res.best);
        if (!opts.out_dir.empty()) save_checkpoint(res.best, opts.out_dir / "phase1_best.ckpt");
      }
    }
    if (!opts.out_dir.empty() && (s % cfg.checkpoint_interval == 0 || last)) {
      Checkpoint ck = tr.checkpoint();
      annotate(ck);
      save_checkpoint(ck, opts.out_dir / "phase1_last.ckpt");
    }
  }
  res.last = tr.checkpoint();
  annotate(res.last);
  if (val.empty() || cfg.steps_phase1 == 0) {
    res.best = res.last;
    res.best_validation = val.empty() ? 0.0 : tr.reconstruction_mse(val);
    res.best.stats["val_recon"] = res.best_validation;
  }
  if (log) log->flush();
  return res;
}

// ---------------------------------------------------------------------------
// Phase 2

template <typename T>
PoseRoll<T> roll_poses(const nets::PosePredictor<T>& predictor, const Var<T>& content,
                       const std::vector<Var<T>>& encoder_poses, std::int64_t context,
                       std::int64_t length) {
  if (context < 1 || length < 2)
    throw ConfigError("pose roll needs context >= 1 and length >= 2");
  if (static_cast<std::int64_t>(encoder_poses.size()) < std::min(context, length - 1))
    throw ConfigError("pose roll: fewer encoder poses than context frames");
  PoseRoll<T> roll;
  auto state = predictor.zero_state(content.dim(0));
  for (std::int64_t t = 2; t <= length; ++t) {
    const std::int64_t s = t - 1;
    const bool from_encoder = s <= context;
    const Var<T>& in = from_encoder ? encoder_poses[static_cast<std::size_t>(s - 1)]
                                    : roll.predicted[static_cast<std::size_t>(s - 2)];
    auto step = predictor.step(content, in, state);
    state = std::move(step.state);
    roll.predicted.push_back(step.pose);
    roll.trace.input_frame.push_back(s);
    roll.trace.source.push_back(from_encoder ? InputSource::kEncoder : InputSource::kPrediction);
  }
  return roll;
}

template <typename T>
Tensor<T> encode(nets::Encoder<T>& encoder, const Tensor<T>& frames, std::int64_t chunk) {
  nn::NoGradGuard no_grad;
  ModeGuard<T> mode(encoder, false);
  const std::int64_t n = frames.dim(0);
  Tensor<T> out({n, encoder.out_dim()});
  for (std::int64_t b = 0; b < n; b += chunk) {
    const std::int64_t e = std::min(n, b + chunk);
    const Var<T> code = encoder(Var<T>(frames.rows(b, e)));
    std::copy_n(code.value().data(), code.value().numel(), out.data() + b * encoder.out_dim());
  }
  return out;
}

template <typename T>
Tensor<T> decode_with(nets::Networks<T>& nets, const Tensor<T>& content_frames,
                      const Tensor<T>& pose, std::int64_t chunk) {
  nn::NoGradGuard no_grad;
  ModeGuard<T> m1(*nets.content_encoder, false);
  ModeGuard<T> m2(*nets.decoder, false);
  const std::int64_t n = content_frames.dim(0);
  if (pose.dim(0) != n) throw nn::ShapeError("decode_with: row counts differ");
  Tensor<T> out(content_frames.shape());
  const std::int64_t stride = content_frames.row_stride();
  for (std::int64_t b = 0; b < n; b += chunk) {
    const std::int64_t e = std::min(n, b + chunk);
    auto enc = nets.content_encoder->forward(Var<T>(content_frames.rows(b, e)));
    std::vector<Var<T>> skips;
    if (nets.config.use_skip_connections) skips = enc.features;
    const Var<T> d = nets.decoder->forward(enc.code, Var<T>(pose.rows(b, e)), skips);
    std::copy_n(d.value().data(), d.value().numel(), out.data() + b * stride);
  }
  return out;
}

template <typename T>
ClipCodes<T> encode_clips(nets::Networks<T>& nets, const synthvid::Dataset& data,
                          const std::vector<std::int64_t>& clips, std::int64_t context) {
  const auto n = static_cast<std::int64_t>(clips.size());
  if (n == 0) throw ConfigError("encode_clips: no clips");
  const auto& s0 = data.sequences.at(static_cast<std::size_t>(clips[0]));
  const std::int64_t len = s0.length;
  if (context < 1 || context > len) throw ConfigError("context exceeds clip length");
  const std::int64_t cd = nets.config.content_dim, pd = nets.config.pose_dim;
  const std::int64_t fstride = s0.channels * s0.height * s0.width;
  ClipCodes<T> codes{Tensor<T>({n, cd}), Tensor<T>({n, len, pd})};
  const std::int64_t chunk = 32;
  for (std::int64_t b = 0; b < n; b += chunk) {
    const std::int64_t e = std::min(n, b + chunk);
    Tensor<T> all({(e - b) * len, s0.channels, s0.height, s0.width});
    Tensor<T> last({e - b, s0.channels, s0.height, s0.width});
    for (std::int64_t i = b; i < e; ++i) {
      const auto& seq = data.sequences.at(static_cast<std::size_t>(clips[i]));
      if (seq.length != len) throw ConfigError("encode_clips: clip lengths differ");
      for (std::int64_t f = 0; f < len; ++f)
        copy_frame(seq, f, all.data() + ((i - b) * len + f) * fstride);
      copy_frame(seq, context - 1, last.data() + (i - b) * fstride);
    }
    const Tensor<T> p = encode(*nets.pose_encoder, all);
    const Tensor<T> c = encode(*nets.content_encoder, last);
    std::copy_n(p.data(), p.numel(), codes.poses.data() + b * len * pd);
    std::copy_n(c.data(), c.numel(), codes.content.data() + b * cd);
  }
  return codes;
}

namespace {

// Rows `rows` of the clip codes as predictor inputs: content (B, cd) and one
// (B, pd) tensor per frame.
template <typename T>
std::pair<Var<T>, std::vector<Var<T>>> code_batch(const ClipCodes<T>& codes,
                                                  const std::vector<std::int64_t>& rows) {
  const auto b = static_cast<std::int64_t>(rows.size());
  const std::int64_t cd = codes.content.dim(1), len = codes.poses.dim(1),
                     pd = codes.poses.dim(2);
  Tensor<T> content({b, cd});
  std::vector<Tensor<T>> poses(static_cast<std::size_t>(len), Tensor<T>({b, pd}));
  for (std::int64_t i = 0; i < b; ++i) {
    std::copy_n(codes.content.data() + rows[i] * cd, cd, content.data() + i * cd);
    for (std::int64_t t = 0; t < len; ++t)
      std::copy_n(codes.poses.data() + (rows[i] * len + t) * pd, pd,
                  poses[static_cast<std::size_t>(t)].data() + i * pd);
  }
  std::vector<Var<T>> pv;
  for (auto& p : poses) pv.emplace_back(std::move(p));
  return {Var<T>(std::move(content)), std::move(pv)};
}

}  // namespace

template <typename T>
LstmTrainer<T>::LstmTrainer(const TrainConfig& cfg, nets::Networks<T>& nets,
                            const synthvid::Dataset& data, std::vector<std::int64_t> clips)
    : cfg_(cfg), nets_(nets), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ull) {
  cfg_.validate();
  if (clips.size() < 2) throw ConfigError("predictor training needs at least two clips");
  for (auto& [name, m] : nets_.groups()) {
    if (m == nets_.pose_predictor.get()) continue;
    m->set_training(false);
    m->set_requires_grad(false);
  }
  codes_ = encode_clips(nets_, data, clips, cfg_.data.context);
  nets_.pose_predictor->set_requires_grad(true);
  nets_.pose_predictor->set_training(true);
  opt_ = std::make_unique<nn::Adam<T>>(nets_.pose_predictor->parameters(), cfg_.optimizer);
}

template <typename T>
double LstmTrainer<T>::step() {
  const std::int64_t n = codes_.content.dim(0);
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  const auto rows = choose_distinct(rng_, pool, std::min(cfg_.batch_size, n));
  const auto [content, poses] = code_batch(codes_, rows);
  const std::int64_t len = codes_.poses.dim(1);
  PoseRoll<T> roll =
      roll_poses(*nets_.pose_predictor, content, poses, cfg_.data.context, len);
  Var<T> loss;
  for (std::int64_t t = 2; t <= len; ++t) {
    const Var<T> e = nn::sum(nn::square(nn::sub(roll.predicted[static_cast<std::size_t>(t - 2)],
                                                poses[static_cast<std::size_t>(t - 1)])));
    loss = loss.defined() ? nn::add(loss, e) : e;
  }
  loss = nn::scale(loss, T{1} / static_cast<T>(rows.size()));
  const double value = static_cast<double>(loss.item());
  if (!finite(value))
    throw NumericError("non-finite pose-prediction loss at phase-2 step " +
                       std::to_string(steps_ + 1));
  opt_->zero_grad();
  nn::backward(loss);
  if (cfg_.lstm_grad_clip > 0.0)
    nn::clip_grad_norm(nets_.pose_predictor->parameters(), cfg_.lstm_grad_clip);
  opt_->step();
  opt_->zero_grad();
  trace_ = std::move(roll.trace);
  ++steps_;
  return value;
}

template <typename T>
nets::Networks<T> load_networks(const Checkpoint& ckpt, const std::vector<std::string>& required) {
  auto n = nets::Networks<T>::build(ckpt.config.net, ckpt.config.seed);
  restore_networks(ckpt, n, required);
  n.set_training(false);
  return n;
}

template <typename T>
Checkpoint train_lstm(const synthvid::Dataset& data, const Checkpoint& ckpt,
                      const TrainConfig& cfg, std::ostream* log) {
  auto nets = load_networks<T>(
      ckpt, {nets::kContentEncoder, nets::kPoseEncoder, nets::kDecoder});
  if (ckpt.config.net.content_dim != cfg.net.content_dim ||
      ckpt.config.net.pose_dim != cfg.net.pose_dim ||
      ckpt.config.net.frame_size != cfg.net.frame_size)
    throw ConfigError("checkpoint network configuration differs from the run configuration");
  // The checkpoint's architecture wins; phase-2 settings come from `cfg`.
  TrainConfig run = cfg;
  run.net = ckpt.config.net;
  const auto n = static_cast<std::int64_t>(data.sequences.size());
  LstmTrainer<T> tr(run, nets, data, training_clips(n, cfg.validation_fraction));
  if (log) *log << "step,L_pred\n";
  double ema = 0.0;
  for (std::int64_t s = 1; s <= run.steps_phase2; ++s) {
    const double v = tr.step();
    ema = s == 1 ? v : 0.99 * ema + 0.01 * v;
    if (log) *log << s << ',' << std::setprecision(9) << v << '\n';
  }
  Checkpoint out = ckpt;
  TrainConfig merged = ckpt.config;
  merged.steps_phase2 = run.steps_phase2;
  out.config = merged;
  Checkpoint captured;
  capture_networks(nets, captured);
  out.groups[nets::kPosePredictor] = captured.groups[nets::kPosePredictor];
  out.phase2_step = run.steps_phase2;
  out.stats["ema_pred"] = ema;
  return out;
}

template <typename T>
PoseErrorStats pose_prediction_error(nets::Networks<T>& nets, const synthvid::Dataset& data,
                                     const std::vector<std::int64_t>& clips,
                                     std::int64_t context) {
  nn::NoGradGuard no_grad;
  const ClipCodes<T> codes = encode_clips(nets, data, clips, context);
  const std::int64_t n = codes.content.dim(0), len = codes.poses.dim(1),
                     pd = codes.poses.dim(2);
  double err = 0.0, disp = 0.0;
  std::int64_t n_err = 0, n_disp = 0;
  for (std::int64_t b = 0; b < n; b += 256) {
    std::vector<std::int64_t> rows;
    for (std::int64_t i = b; i < std::min(n, b + 256); ++i) rows.push_back(i);
    const auto [content, poses] = code_batch(codes, rows);
    const auto roll = roll_poses(*nets.pose_predictor, content, poses, context, len);
    for (std::int64_t t = 2; t <= len; ++t) {
      const auto& zh = roll.predicted[static_cast<std::size_t>(t - 2)].value();
      const auto& z = poses[static_cast<std::size_t>(t - 1)].value();
      const auto& zp = poses[static_cast<std::size_t>(t - 2)].value();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double e2 = 0.0, d2 = 0.0;
        for (std::int64_t d = 0; d < pd; ++d) {
          const auto k = static_cast<std::int64_t>(i) * pd + d;
          e2 += std::pow(static_cast<double>(zh[k]) - static_cast<double>(z[k]), 2);
          d2 += std::pow(static_cast<double>(z[k]) - static_cast<double>(zp[k]), 2);
        }
        err += std::sqrt(e2);
        disp += std::sqrt(d2);
        ++n_err;
        ++n_disp;
      }
    }
  }
  return {err / static_cast<double>(n_err), disp / static_cast<double>(n_disp)};
}

template <typename T>
Tensor<T> predict(nets::Networks<T>& nets, const Tensor<T>& context, std::int64_t horizon) {
  if (context.rank() != 5) throw nn::ShapeError("predict: context must be (B, C, ch, H, W)");
  if (horizon < 1) throw ConfigError("predict: horizon must be >= 1");
  nn::NoGradGuard no_grad;
  const std::int64_t b = context.dim(0), c = context.dim(1), ch = context.dim(2),
                     h = context.dim(3), w = context.dim(4);
  const std::int64_t fstride = ch * h * w;
  const Tensor<T> flat = context.reshaped({b * c, ch, h, w});
  const Tensor<T> pose = encode(*nets.pose_encoder, flat);
  const std::int64_t pd = nets.config.pose_dim;
  std::vector<Var<T>> poses;
  for (std::int64_t f = 0; f < c; ++f) {
    Tensor<T> p({b, pd});
    for (std::int64_t i = 0; i < b; ++i)
      std::copy_n(pose.data() + (i * c + f) * pd, pd, p.data() + i * pd);
    poses.emplace_back(std::move(p));
  }
  Tensor<T> last({b, ch, h, w});
  for (std::int64_t i = 0; i < b; ++i)
    std::copy_n(context.data() + (i * c + c - 1) * fstride, fstride, last.data() + i * fstride);
  const Tensor<T> content = encode(*nets.content_encoder, last);
  ModeGuard<T> mode(*nets.pose_predictor, false);
  const auto roll = roll_poses(*nets.pose_predictor, Var<T>(content), poses, c, c + horizon);

  // Decode all horizon steps in one pass: rows ordered (clip, step).
  Tensor<T> frames({b * horizon, ch, h, w});
  Tensor<T> zp({b * horizon, pd});
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t t = 0; t < horizon; ++t) {
      const auto& pred = roll.predicted[static_cast<std::size_t>(c - 1 + t)].value();
      std::copy_n(pred.data() + i * pd, pd, zp.data() + (i * horizon + t) * pd);
      std::copy_n(last.data() + i * fstride, fstride, frames.data() + (i * horizon + t) * fstride);
    }
  return decode_with(nets, frames, zp).reshaped({b, horizon, ch, h, w});
}

template <typename T>
Tensor<T> predict(const Checkpoint& ckpt, nets::Networks<T>& nets, const Tensor<T>& context,
                  std::int64_t horizon) {
  if (context.rank() != 5 || context.dim(1) != ckpt.config.data.context)
    throw ConfigError("predict: context has " +
                      std::to_string(context.rank() == 5 ? context.dim(1) : -1) +
                      " frames, the checkpoint was trained with " +
                      std::to_string(ckpt.config.data.context));
  return predict(nets, context, horizon);
}

#define MIPAE_INSTANTIATE(T)                                                                    \
  template class MainTrainer<T>;                                                                \
  template class LstmTrainer<T>;                                                                \
  template TrainResult train_main<T>(const synthvid::Dataset&, const TrainConfig&,              \
                                     const TrainOptions&);                                      \
  template PoseRoll<T> roll_poses<T>(const nets::PosePredictor<T>&, const Var<T>&,              \
                                     const std::vector<Var<T>>&, std::int64_t, std::int64_t);   \
  template ClipCodes<T> encode_clips<T>(nets::Networks<T>&, const synthvid::Dataset&,           \
                                        const std::vector<std::int64_t>&, std::int64_t);        \
  template Checkpoint train_lstm<T>(const synthvid::Dataset&, const Checkpoint&,                \
                                    const TrainConfig&, std::ostream*);                         \
  template PoseErrorStats pose_prediction_error<T>(nets::Networks<T>&,                          \
                                                   const synthvid::Dataset&,                    \
                                                   const std::vector<std::int64_t>&,            \
                                                   std::int64_t);                               \
  template nets::Networks<T> load_networks<T>(const Checkpoint&,                                \
                                              const std::vector<std::string>&);                 \
  template Tensor<T> predict<T>(nets::Networks<T>&, const Tensor<T>&, std::int64_t);            \
  template Tensor<T> predict<T>(const Checkpoint&, nets::Networks<T>&, const Tensor<T>&,        \
                                std::int64_t);                                                  \
  template Tensor<T> encode<T>(nets::Encoder<T>&, const Tensor<T>&, std::int64_t);              \
  template Tensor<T> decode_with<T>(nets::Networks<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                    std::int64_t);

MIPAE_INSTANTIATE(float)
MIPAE_INSTANTIATE(double)

#undef MIPAE_INSTANTIATE

}  // namespace mipae::trainer
