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

#include "mipae/evalkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "mipae/image_io.hpp"
#include "mipae/trainer.hpp"

namespace mipae::evalkit {

using nn::Shape;
using nn::Tensor;

double psnr(std::span<const double> a, std::span<const double> b, double max_val) {
  if (a.size() != b.size()) throw nn::ShapeError("psnr: frame sizes differ");
  if (a.empty()) throw nn::ShapeError("psnr: empty frames");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_taps() {
  std::array<double, kWin> g{};
  double s = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    g[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

// Valid-region separable filtering of an (h, w) plane.
std::vector<double> filter_valid(const std::vector<double>& x, std::int64_t h, std::int64_t w,
                                 const std::array<double, kWin>& g) {
  const std::int64_t ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * x[i * w + j + k];
      tmp[i * ow + j] = s;
    }
  for (std::int64_t i = 0; i < oh; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[k] * tmp[(i + k) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

double ssim(std::span<const double> a, std::span<const double> b, FrameShape shape,
            double max_val) {
  if (a.size() != b.size() || static_cast<std::int64_t>(a.size()) != shape.numel())
    throw nn::ShapeError("ssim: frame sizes differ from the given shape");
  if (shape.height < kWin || shape.width < kWin)
    throw std::invalid_argument("ssim: frame " + std::to_string(shape.height) + "x" +
                                std::to_string(shape.width) + " is smaller than the " +
                                std::to_string(kWin) + "x" + std::to_string(kWin) + " window");
  static const auto g = gaussian_taps();
  const double c1 = std::pow(0.01 * max_val, 2), c2 = std::pow(0.03 * max_val, 2);
  const std::int64_t hw = shape.height * shape.width;
  double total = 0.0;
  for (std::int64_t c = 0; c < shape.channels; ++c) {
    std::vector<double> x(a.begin() + c * hw, a.begin() + (c + 1) * hw);
    std::vector<double> y(b.begin() + c * hw, b.begin() + (c + 1) * hw);
    std::vector<double> xx(hw), yy(hw), xy(hw);
    for (std::int64_t i = 0; i < hw; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, shape.height, shape.width, g);
    const auto my = filter_valid(y, shape.height, shape.width, g);
    const auto sxx = filter_valid(xx, shape.height, shape.width, g);
    const auto syy = filter_valid(yy, shape.height, shape.width, g);
    const auto sxy = filter_valid(xy, shape.height, shape.width, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(shape.channels);
}

synthvid::Vec2 centroid_oracle(std::span<const double> frame, FrameShape shape,
                               double threshold) {
  if (static_cast<std::int64_t>(frame.size()) != shape.numel())
    throw nn::ShapeError("centroid_oracle: frame size differs from the given shape");
  const std::int64_t hw = shape.height * shape.width;
  double wsum = 0.0, sx = 0.0, sy = 0.0;
  for (std::int64_t p = 0; p < hw; ++p) {
    double v = 0.0;
    for (std::int64_t c = 0; c < shape.channels; ++c) v += frame[c * hw + p];
    v /= static_cast<double>(shape.channels);
    if (v <= threshold) continue;
    wsum += v;
    sx += v * (static_cast<double>(p % shape.width) + 0.5);
    sy += v * (static_cast<double>(p / shape.width) + 0.5);
  }
  if (wsum == 0.0) throw EmptyForegroundError("centroid_oracle: no pixel above threshold");
  return {sx / wsum, sy / wsum};
}

Tensor<double> swap_grid(nets::Networks<float>& nets, const Tensor<float>& content_frames,
                         const Tensor<float>& pose_frames) {
  if (content_frames.rank() != 4 || pose_frames.rank() != 4 ||
      content_frames.row_stride() != pose_frames.row_stride())
    throw nn::ShapeError("swap_grid: frames must be (N, channels, H, W) of one size");
  const std::int64_t rows = content_frames.dim(0), cols = pose_frames.dim(0);
  const std::int64_t stride = content_frames.row_stride();
  const Tensor<float> pose = trainer::encode(*nets.pose_encoder, pose_frames);
  const std::int64_t pd = pose.dim(1);
  Tensor<float> cf({rows * cols, content_frames.dim(1), content_frames.dim(2),
                    content_frames.dim(3)});
  Tensor<float> zp({rows * cols, pd});
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      std::copy_n(content_frames.data() + r * stride, stride, cf.data() + (r * cols + c) * stride);
      std::copy_n(pose.data() + c * pd, pd, zp.data() + (r * cols + c) * pd);
    }
  const Tensor<float> out = trainer::decode_with(nets, cf, zp);
  Shape s{rows, cols, content_frames.dim(1), content_frames.dim(2), content_frames.dim(3)};
  return out.cast<double>().reshaped(s);
}

void write_grid_png(const std::filesystem::path& path, const Tensor<double>& grid,
                    const Tensor<double>& pose_header, const Tensor<double>& content_header) {
  if (grid.rank() != 5) throw nn::ShapeError("write_grid_png: grid must be rank 5");
  const std::int64_t rows = grid.dim(0), cols = grid.dim(1), ch = grid.dim(2), h = grid.dim(3),
                     w = grid.dim(4);
  const std::int64_t gap = 2;
  const std::int64_t off_r = pose_header.empty() ? 0 : 1;
  const std::int64_t off_c = content_header.empty() ? 0 : 1;
  const std::int64_t H = (rows + off_r) * (h + gap) + gap;
  const std::int64_t W = (cols + off_c) * (w + gap) + gap;
  std::vector<std::uint8_t> img(static_cast<std::size_t>(H * W), 96);
  auto blit = [&](const double* frame, std::int64_t cell_r, std::int64_t cell_c) {
    const std::int64_t y0 = gap + cell_r * (h + gap), x0 = gap + cell_c * (w + gap);
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        double v = 0.0;
        for (std::int64_t c = 0; c < ch; ++c) v += frame[(c * h + i) * w + j];
        v = std::clamp(v / static_cast<double>(ch), 0.0, 1.0);
        img[static_cast<std::size_t>((y0 + i) * W + x0 + j)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  };
  const std::int64_t fs = ch * h * w;
  if (off_r)
    for (std::int64_t c = 0; c < cols; ++c) blit(pose_header.data() + c * fs, 0, c + off_c);
  if (off_c)
    for (std::int64_t r = 0; r < rows; ++r) blit(content_header.data() + r * fs, r + off_r, 0);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      blit(grid.data() + (r * cols + c) * fs, r + off_r, c + off_c);
  write_png_gray(path, img, W, H);
}

double SwapFidelity::fraction_within(double px) const {
  if (errors.empty()) return 0.0;
  const auto n = std::count_if(errors.begin(), errors.end(), [px](double e) { return e <= px; });
  return static_cast<double>(n) / static_cast<double>(errors.size());
}

double SwapFidelity::mean() const {
  if (errors.empty()) return 0.0;
  double s = 0.0;
  for (double e : errors) s += e;
  return s / static_cast<double>(errors.size());
}

SwapFidelity swap_fidelity(const Tensor<double>& grid, const Tensor<float>& pose_frames) {
  const std::int64_t rows = grid.dim(0), cols = grid.dim(1);
  const FrameShape fs{grid.dim(2), grid.dim(3), grid.dim(4)};
  SwapFidelity out;
  std::vector<synthvid::Vec2> targets;
  for (std::int64_t c = 0; c < cols; ++c) {
    std::vector<double> f(pose_frames.data() + c * fs.numel(),
                          pose_frames.data() + (c + 1) * fs.numel());
    targets.push_back(centroid_oracle(f, fs));
  }
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      std::span<const double> cell(grid.data() + (r * cols + c) * fs.numel(),
                                   static_cast<std::size_t>(fs.numel()));
      double err;
      try {
        const auto p = centroid_oracle(cell, fs);
        err = std::hypot(p.x - targets[c].x, p.y - targets[c].y);
      } catch (const EmptyForegroundError&) {
        err = std::numeric_limits<double>::infinity();
      }
      out.errors.push_back(err);
    }
  return out;
}

double RolloutReport::mean_ssim() const {
  double s = 0.0;
  for (double v : ssim.mean) s += v;
  return ssim.mean.empty() ? 0.0 : s / static_cast<double>(ssim.mean.size());
}

double RolloutReport::mean_psnr() const {
  double s = 0.0;
  for (double v : psnr.mean) s += v;
  return psnr.mean.empty() ? 0.0 : s / static_cast<double>(psnr.mean.size());
}

namespace {

Curve summarize(const std::vector<std::vector<double>>& per_step) {
  Curve c;
  for (const auto& v : per_step) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    c.mean.push_back(m);
    c.stddev.push_back(std::sqrt(var / static_cast<double>(v.size())));
  }
  return c;
}

}  // namespace

RolloutReport score_rollouts(const synthvid::Dataset& data, std::int64_t context,
                             std::int64_t horizon, const Predictor& predictor) {
  if (data.sequences.empty()) throw ConfigError("score_rollouts: empty dataset");
  std::vector<std::vector<double>> ps(static_cast<std::size_t>(horizon)),
      ss(static_cast<std::size_t>(horizon));
  for (const auto& seq : data.sequences) {
    if (seq.length < context + horizon)
      throw ConfigError("score_rollouts: clip shorter than context + horizon");
    const FrameShape fs{seq.channels, seq.height, seq.width};
    const Tensor<float> pred = predictor(seq, context, horizon);
    if (pred.numel() != horizon * fs.numel())
      throw nn::ShapeError("score_rollouts: predictor returned " + nn::to_string(pred.shape()));
    const Tensor<double> truth =
        synthvid::frames_tensor<double>(seq, context, horizon);
    for (std::int64_t t = 0; t < horizon; ++t) {
      std::vector<double> p(pred.data() + t * fs.numel(), pred.data() + (t + 1) * fs.numel());
      std::span<const double> g(truth.data() + t * fs.numel(), static_cast<std::size_t>(fs.numel()));
      ps[t].push_back(psnr(p, g));
      ss[t].push_back(ssim(p, g, fs));
    }
  }
  RolloutReport r;
  r.psnr = summarize(ps);
  r.ssim = summarize(ss);
  r.clips = static_cast<std::int64_t>(data.sequences.size());
  return r;
}

RolloutReport evaluate_rollout(const Checkpoint& ckpt, nets::Networks<float>& nets,
                               const synthvid::Dataset& test) {
  const auto& dc = ckpt.config.data;
  if (test.config.frame_size != dc.frame_size || test.config.context != dc.context ||
      test.config.horizon != dc.horizon)
    throw ConfigError("evaluate_rollout: test dataset (frame " +
                      std::to_string(test.config.frame_size) + ", C=" +
                      std::to_string(test.config.context) + ", T=" +
                      std::to_string(test.config.horizon) +
                      ") does not match the checkpoint configuration");
  return score_rollouts(test, dc.context, dc.horizon,
                        [&](const synthvid::VideoSequence& seq, std::int64_t c, std::int64_t t) {
                          Tensor<float> ctx = synthvid::frames_tensor<float>(seq, 0, c);
                          Shape s = ctx.shape();
                          s.insert(s.begin(), 1);
                          return trainer::predict(ckpt, nets, ctx.reshaped(s), t);
                        });
}

void write_report_csv(const std::filesystem::path& path, const RolloutReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "metric,timestep,mean,std\n" << std::setprecision(9);
  for (std::size_t t = 0; t < report.psnr.mean.size(); ++t)
    out << "psnr," << t + 1 << ',' << report.psnr.mean[t] << ',' << report.psnr.stddev[t] << '\n';
  for (std::size_t t = 0; t < report.ssim.mean.size(); ++t)
    out << "ssim," << t + 1 << ',' << report.ssim.mean[t] << ',' << report.ssim.stddev[t] << '\n';
  for (std::size_t t = 0; t < report.psnr.mean.size(); ++t) out << "lpips," << t + 1 << ",,\n";
  if (!out) throw IoError("write failed: " + path.string());
}

void write_curve_svg(const std::filesystem::path& path, const std::string& title,
                     const std::string& y_label, const std::vector<NamedCurve>& curves) {
  const double W = 480, H = 320, left = 60, right = 20, top = 36, bottom = 44;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t steps = 0;
  for (const auto& nc : curves) {
    steps = std::max(steps, nc.curve.mean.size());
    for (std::size_t i = 0; i < nc.curve.mean.size(); ++i) {
      lo = std::min(lo, nc.curve.mean[i] - nc.curve.stddev[i]);
      hi = std::max(hi, nc.curve.mean[i] + nc.curve.stddev[i]);
    }
  }
  if (steps == 0) throw std::invalid_argument("write_curve_svg: no data");
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto px = [&](double i) {
    return left + (steps == 1 ? 0.5 : i / static_cast<double>(steps - 1)) * (W - left - right);
  };
  auto py = [&](double v) { return top + (hi - v) / (hi - lo) * (H - top - bottom); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << title
      << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right
      << "\" y2=\"" << H - bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << H - bottom << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < steps; ++i)
    out << "<text x=\"" << px(static_cast<double>(i)) << "\" y=\"" << H - bottom + 14
        << "\" text-anchor=\"middle\">" << i + 1 << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
        << std::setprecision(3) << v << std::setprecision(2) << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << py(v) << "\" x2=\"" << W - right << "\" y2=\""
        << py(v) << "\" stroke=\"#ddd\"/>\n";
  }
  out << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 8
      << "\" text-anchor=\"middle\">prediction step</text>\n";
  out << "<text transform=\"translate(14," << (top + H - bottom) / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << y_label << "</text>\n";
  for (std::size_t s = 0; s < curves.size(); ++s) {
    const auto& c = curves[s].curve;
    const char* col = colors[s % 5];
    out << "<polygon fill=\"" << col << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < c.mean.size(); ++i)
      out << px(static_cast<double>(i)) << ',' << py(c.mean[i] + c.stddev[i]) << ' ';
    for (std::size_t i = c.mean.size(); i-- > 0;)
      out << px(static_cast<double>(i)) << ',' << py(c.mean[i] - c.stddev[i]) << ' ';
    out << "\"/>\n<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.mean.size(); ++i)
      out << px(static_cast<double>(i)) << ',' << py(c.mean[i]) << ' ';
    out << "\"/>\n";
    out << "<text x=\"" << W - right - 4 << "\" y=\"" << top + 14 * (s + 1)
        << "\" text-anchor=\"end\" fill=\"" << col << "\">" << curves[s].label << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("write failed: " + path.string());
}

MigProbe make_mig_probe(const synthvid::DatasetConfig& cfg, std::int64_t repeats,
                        std::uint64_t seed, int pose_grid) {
  if (cfg.num_objects != 1) throw ConfigError("MIG probe supports single-object clips only");
  if (repeats < 1) throw ConfigError("MIG probe needs at least one repeat");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::int64_t classes =
      cfg.num_shapes * synthvid::kNumScales * synthvid::kNumOrientations;
  const std::int64_t n = classes * repeats;
  const std::int64_t s = cfg.frame_size;
  MigProbe probe;
  probe.frames = Tensor<float>({n, 1, s, s});
  std::int64_t row = 0;
  for (int shape = 0; shape < cfg.num_shapes; ++shape)
    for (int scale = 0; scale < synthvid::kNumScales; ++scale)
      for (int orient = 0; orient < synthvid::kNumOrientations; ++orient)
        for (std::int64_t r = 0; r < repeats; ++r, ++row) {
          synthvid::FactorTrack tr;
          tr.content = {shape, scale, orient};
          const auto b = synthvid::sprite_bounds(tr.content, cfg);
          const synthvid::Vec2 pos{b.x.lo + unit(rng) * (b.x.hi - b.x.lo),
                                   b.y.lo + unit(rng) * (b.y.hi - b.y.lo)};
          tr.positions.push_back(pos);
          const auto frame = synthvid::render_frame(synthvid::SpriteState{tr.content, pos}, s);
          // Quantize like generated clips.
          for (std::int64_t p = 0; p < s * s; ++p)
            probe.frames[row * s * s + p] =
                static_cast<float>(std::lround(frame[static_cast<std::size_t>(p)] * 255.0f)) /
                255.0f;
          const std::span<const synthvid::FactorTrack> one(&tr, 1);
          probe.factors.content.push_back(synthvid::content_label(one));
          probe.factors.pose.push_back(synthvid::pose_label(one, 0, pose_grid));
        }
  return probe;
}

miest::MigReport model_mig(nets::Networks<float>& nets, const MigProbe& probe, int k) {
  const Tensor<float> zc = trainer::encode(*nets.content_encoder, probe.frames);
  const Tensor<float> zp = trainer::encode(*nets.pose_encoder, probe.frames);
  miest::RepSamples reps;
  reps.content_dim = zc.dim(1);
  reps.pose_dim = zp.dim(1);
  reps.content.assign(zc.data(), zc.data() + zc.numel());
  reps.pose.assign(zp.data(), zp.data() + zp.numel());
  return miest::mig_score(probe.factors, reps, k);
}

}  // namespace mipae::evalkit
