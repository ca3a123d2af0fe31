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

#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "mipae/checkpoint.hpp"
#include "mipae/config.hpp"
#include "mipae/errors.hpp"
#include "mipae/evalkit.hpp"
#include "mipae/miest.hpp"
#include "mipae/trainer.hpp"
#include "mipae/version.hpp"

namespace mipae::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kDeviceEnv = "MIPAE_DEVICE";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void check_device() {
  const char* dev = std::getenv(kDeviceEnv);
  if (dev && *dev && std::string(dev) != "cpu")
    throw ConfigError(std::string(kDeviceEnv) + "=" + dev +
                      ": only the cpu device is available in this build");
}

// Everything written under one run directory is listed here.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& argv) {
    doc_["command"] = std::move(command);
    doc_["argv"] = argv;
    doc_["version"] = mipae::version();
    doc_["code_hash"] = mipae::code_hash();
    doc_["started_utc"] = utc_now();
    doc_["device"] = "cpu";
    doc_["inputs"] = json::array();
    doc_["artifacts"] = json::array();
  }
  void config(const TrainConfig& cfg) {
    doc_["config"] = to_yaml(cfg);
    doc_["seeds"] = {{"run", cfg.seed}, {"data", cfg.data.seed}, {"test", cfg.eval.test_seed}};
  }
  void input(const fs::path& p) {
    doc_["inputs"].push_back(
        {{"path", fs::absolute(p).string()}, {"bytes", static_cast<std::uint64_t>(fs::file_size(p))}});
  }
  void artifact(const fs::path& p) { doc_["artifacts"].push_back(p.filename().string()); }
  json& extra() { return doc_["results"]; }
  void write(const fs::path& path) {
    doc_["finished_utc"] = utc_now();
    std::ofstream out(path);
    out << doc_.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest " + path.string());
  }

 private:
  json doc_;
};

// Phase-1 checkpoints carry an untrained predictor group.
bool has_trained_predictor(const Checkpoint& ckpt) {
  return ckpt.has_group(nets::kPosePredictor) && ckpt.phase2_step > 0;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " not found: " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

synthvid::Dataset test_dataset(const TrainConfig& cfg) {
  synthvid::DatasetConfig dc = cfg.data;
  dc.num_sequences = cfg.eval.test_sequences;
  dc.seed = cfg.eval.test_seed;
  return synthvid::generate_dataset(dc);
}

// NumPy .npy, version 1.0, little-endian float32.
void write_npy(const fs::path& path, const nn::Tensor<float>& t) {
  std::string shape;
  for (auto d : t.shape()) shape += std::to_string(d) + ", ";
  std::string header =
      "{'descr': '<f4', 'fortran_order': False, 'shape': (" + shape + "), }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  const char magic[] = "\x93NUMPY\x01\x00";
  out.write(magic, 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(lb, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw IoError("cannot write " + path.string());
}

struct Common {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> baseline;
  std::optional<std::int64_t> context;
  std::optional<std::int64_t> horizon;
  std::optional<std::int64_t> steps;
  bool mig = false;
  bool skip_rollout = false;
  std::string label;
  std::int64_t clips = -1;
  std::int64_t png_clips = 8;
};

void apply_data_overrides(TrainConfig& cfg, const Common& o) {
  if (o.context) cfg.data.context = *o.context;
  if (o.horizon) cfg.data.horizon = *o.horizon;
}

int cmd_generate(const Common& o, const std::vector<std::string>& argv) {
  TrainConfig cfg = load_config(o.config);
  if (o.seed) cfg.data.seed = *o.seed;
  apply_data_overrides(cfg, o);
  cfg.validate();
  const fs::path out = o.out;
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  Manifest m("generate", argv);
  m.config(cfg);
  m.input(o.config);
  const auto ds = synthvid::generate_dataset(cfg.data);
  synthvid::write_dataset(ds, out);
  m.artifact(out);
  m.write(fs::path(out.string() + ".manifest.json"));
  std::cerr << "wrote " << ds.sequences.size() << " clips of " << cfg.data.clip_length()
            << " frames to " << out << '\n';
  return kOk;
}

synthvid::Dataset load_or_generate(const std::string& data_path, const TrainConfig& cfg,
                                   Manifest& m) {
  if (data_path.empty()) return synthvid::generate_dataset(cfg.data);
  require_file(data_path, "dataset");
  m.input(data_path);
  auto ds = synthvid::read_dataset(data_path);
  const auto& dc = ds.config;
  if (dc.frame_size != cfg.data.frame_size || dc.clip_length() != cfg.data.clip_length() ||
      dc.num_objects != cfg.data.num_objects)
    throw ConfigError("dataset " + data_path + " (frame " + std::to_string(dc.frame_size) +
                      ", length " + std::to_string(dc.clip_length()) +
                      ") does not match the configuration (frame " +
                      std::to_string(cfg.data.frame_size) + ", length " +
                      std::to_string(cfg.data.clip_length()) + ")");
  return ds;
}

int cmd_train(const Common& o, const std::vector<std::string>& argv) {
  TrainConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.baseline) cfg.baseline = baseline_from_string(*o.baseline);
  if (o.steps) cfg.steps_phase1 = *o.steps;
  apply_data_overrides(cfg, o);
  cfg.validate();
  const fs::path dir = o.out;
  ensure_dir(dir);
  Manifest m("train", argv);
  m.input(o.config);
  m.config(cfg);
  const auto data = load_or_generate(o.data, cfg, m);

  trainer::TrainOptions opts;
  opts.out_dir = dir;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_step = [&](const trainer::LossRecord& r) {
    if (r.step % 100 != 0) return;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "step " << r.step << "/" << cfg.steps_phase1 << "  recon " << r.recon
              << "  sim " << r.sim << "  mi " << r.mi << "  critic " << r.critic << "  ("
              << secs << " s)\n";
  };
  const auto res = trainer::train_main<float>(data, cfg, opts);
  m.artifact(dir / "train_log.csv");
  m.artifact(dir / "phase1_best.ckpt");
  m.artifact(dir / "phase1_last.ckpt");
  m.extra() = {{"best_validation_mse", res.best_validation},
               {"best_step", res.best.phase1_step}};
  m.write(dir / "manifest.json");
  std::cerr << "best validation MSE " << res.best_validation << " at step "
            << res.best.phase1_step << '\n';
  return kOk;
}

int cmd_train_lstm(const Common& o, const std::vector<std::string>& argv) {
  require_file(o.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  TrainConfig cfg = o.config.empty() ? ckpt.config : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.steps) cfg.steps_phase2 = *o.steps;
  cfg.validate();
  const fs::path dir = o.out;
  ensure_dir(dir);
  Manifest m("train-lstm", argv);
  if (!o.config.empty()) m.input(o.config);
  m.input(o.checkpoint);
  m.config(cfg);
  const auto data = load_or_generate(o.data, cfg, m);
  std::ofstream log(dir / "lstm_log.csv");
  const Checkpoint out = trainer::train_lstm<float>(data, ckpt, cfg, &log);
  save_checkpoint(out, dir / "model.ckpt");
  m.artifact(dir / "lstm_log.csv");
  m.artifact(dir / "model.ckpt");
  m.extra() = {{"ema_pred", out.stats.at("ema_pred")}};
  m.write(dir / "manifest.json");
  return kOk;
}

// Context frames followed by predictions, side by side.
void write_strip(const fs::path& path, const nn::Tensor<float>& ctx, const nn::Tensor<float>& pred) {
  const std::int64_t c = ctx.dim(0), t = pred.dim(0);
  nn::Tensor<double> grid({1, c + t, ctx.dim(1), ctx.dim(2), ctx.dim(3)});
  const std::int64_t fs = ctx.row_stride();
  for (std::int64_t i = 0; i < c * fs; ++i) grid[i] = ctx[i];
  for (std::int64_t i = 0; i < t * fs; ++i) grid[c * fs + i] = pred[i];
  evalkit::write_grid_png(path, grid);
}

int cmd_predict(const Common& o, const std::vector<std::string>& argv) {
  require_file(o.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  if (!has_trained_predictor(ckpt))
    throw ConfigError("checkpoint " + o.checkpoint +
                      " has no trained pose predictor; run train-lstm first");
  TrainConfig cfg = ckpt.config;
  const std::int64_t context = o.context.value_or(cfg.data.context);
  const std::int64_t horizon = o.horizon.value_or(cfg.data.horizon);
  if (context != cfg.data.context)
    throw ConfigError("--context " + std::to_string(context) +
                      " differs from the checkpoint's context length " +
                      std::to_string(cfg.data.context));
  if (horizon < 1) throw ConfigError("--horizon must be positive");
  const fs::path dir = o.out;
  ensure_dir(dir);
  Manifest m("predict", argv);
  m.input(o.checkpoint);
  m.config(cfg);
  auto nets = trainer::load_networks<float>(ckpt);
  synthvid::Dataset data;
  if (o.data.empty()) {
    data = test_dataset(cfg);
  } else {
    require_file(o.data, "dataset");
    m.input(o.data);
    data = synthvid::read_dataset(o.data);
  }
  std::int64_t n = static_cast<std::int64_t>(data.sequences.size());
  if (o.clips >= 0) n = std::min(n, o.clips);
  const auto& s0 = data.sequences.at(0);
  if (s0.length < context) throw ConfigError("clips are shorter than the context");
  nn::Tensor<float> all({n, horizon, s0.channels, s0.height, s0.width});
  const std::int64_t per = horizon * s0.channels * s0.height * s0.width;
  for (std::int64_t i = 0; i < n; ++i) {
    nn::Tensor<float> ctx = synthvid::frames_tensor<float>(data.sequences[i], 0, context);
    auto shape = ctx.shape();
    shape.insert(shape.begin(), 1);
    const nn::Tensor<float> pred = trainer::predict(ckpt, nets, ctx.reshaped(shape), horizon);
    std::copy_n(pred.data(), per, all.data() + i * per);
    if (i < o.png_clips) {
      const fs::path png = dir / ("clip_" + std::to_string(i) + ".png");
      write_strip(png, ctx, pred.reshaped({horizon, s0.channels, s0.height, s0.width}));
      m.artifact(png);
    }
  }
  write_npy(dir / "predictions.npy", all);
  m.artifact(dir / "predictions.npy");
  m.extra() = {{"clips", n}, {"context", context}, {"horizon", horizon}};
  m.write(dir / "manifest.json");
  std::cerr << "predicted " << horizon << " frames for " << n << " clips\n";
  return kOk;
}

int cmd_eval(const Common& o, const std::vector<std::string>& argv) {
  require_file(o.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const TrainConfig& cfg = ckpt.config;
  const fs::path dir = o.out;
  ensure_dir(dir);
  Manifest m("eval", argv);
  m.input(o.checkpoint);
  m.config(cfg);
  auto nets = trainer::load_networks<float>(ckpt);
  synthvid::Dataset test;
  if (o.data.empty()) {
    test = test_dataset(cfg);
  } else {
    require_file(o.data, "dataset");
    m.input(o.data);
    test = synthvid::read_dataset(o.data);
  }
  json results;

  // Swap grid: content of the first frame of `rows` clips, poses of the
  // whole next clip.
  const std::int64_t rows =
      std::min<std::int64_t>(cfg.eval.swap_rows, static_cast<std::int64_t>(test.sequences.size()) - 1);
  if (rows >= 1) {
    const auto& ps = test.sequences[rows];
    const nn::Tensor<float> pose_frames = synthvid::frames_tensor<float>(ps, 0, ps.length);
    nn::Tensor<float> content_frames({rows, ps.channels, ps.height, ps.width});
    for (std::int64_t r = 0; r < rows; ++r) {
      const auto f = synthvid::frames_tensor<float>(test.sequences[r], 0, 1);
      std::copy_n(f.data(), f.numel(), content_frames.data() + r * f.numel());
    }
    const auto grid = evalkit::swap_grid(nets, content_frames, pose_frames);
    evalkit::write_grid_png(dir / "swap_grid.png", grid, pose_frames.cast<double>(),
                            content_frames.cast<double>());
    m.artifact(dir / "swap_grid.png");
    if (cfg.data.num_objects == 1) {
      const auto fid = evalkit::swap_fidelity(grid, pose_frames);
      results["swap_fraction_within_3px"] = fid.fraction_within(3.0);
      results["swap_mean_error_px"] = std::isfinite(fid.mean()) ? json(fid.mean()) : json("inf");
      std::ofstream se(dir / "swap_errors.csv");
      se << "row,col,error_px\n";
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < ps.length; ++c)
          se << r << ',' << c << ',' << fid.errors[r * ps.length + c] << '\n';
      m.artifact(dir / "swap_errors.csv");
    }
  }

  if (!o.skip_rollout) {
    if (!has_trained_predictor(ckpt))
      throw ConfigError("checkpoint " + o.checkpoint +
                        " has no trained pose predictor; run train-lstm first or pass --skip-rollout");
    const auto rep = evalkit::evaluate_rollout(ckpt, nets, test);
    evalkit::write_report_csv(dir / "report.csv", rep);
    const std::string label = o.label.empty() ? to_string(cfg.baseline) : o.label;
    evalkit::write_curve_svg(dir / "psnr.svg", "PSNR over the prediction horizon", "PSNR (dB)",
                             {{label, rep.psnr}});
    evalkit::write_curve_svg(dir / "ssim.svg", "SSIM over the prediction horizon", "SSIM",
                             {{label, rep.ssim}});
    for (const char* f : {"report.csv", "psnr.svg", "ssim.svg"}) m.artifact(dir / f);
    results["mean_ssim"] = rep.mean_ssim();
    results["mean_psnr"] = rep.mean_psnr();
    results["clips"] = rep.clips;
  }

  if (o.mig) {
    const auto probe = evalkit::make_mig_probe(cfg.data, cfg.eval.mig_repeats,
                                               cfg.eval.test_seed, cfg.eval.pose_grid);
    const auto rep =
        evalkit::model_mig(nets, probe, static_cast<int>(cfg.eval.mig_neighbors));
    const std::string label = o.label.empty() ? to_string(cfg.baseline) : o.label;
    miest::write_mig_csv(dir / "mig.csv", {{label, rep}});
    m.artifact(dir / "mig.csv");
    results["mig"] = rep.mig;
    results["mig_samples"] = rep.samples;
  }
  m.extra() = results;
  m.write(dir / "manifest.json");
  std::cerr << results.dump(2) << '\n';
  return kOk;
}

void add_common(CLI::App* sub, Common& o) {
  sub->add_option("--config", o.config, "YAML run configuration");
  sub->add_option("--seed", o.seed, "Override the seed");
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}

int run(const std::vector<std::string>& args_in) {
  std::vector<std::string> args = args_in;
  if (args.empty()) args.emplace_back("mipae");
  Common o;
  CLI::App app{"Disentangled content/pose video prediction on synthetic moving shapes.\n"
               "Exit codes: 0 success, 1 other failure, 2 configuration error, 3 file error,\n"
               "4 non-finite values. Set " +
               std::string(kDeviceEnv) + " to choose the compute device (only \"cpu\")."};
  app.name(fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mipae::version()) + " (" + mipae::code_hash() + ")");

  auto* gen = app.add_subcommand("generate", "Render a moving-shapes dataset");
  add_common(gen, o);
  gen->get_option("--config")->required();
  gen->get_option("--seed")->description("Override data.seed");
  gen->add_option("--out", o.out, "Dataset file to write")->required();
  gen->add_option("--context", o.context, "Override data.context");
  gen->add_option("--horizon", o.horizon, "Override data.horizon");

  auto* train = app.add_subcommand("train", "Train encoders, decoder and critic");
  add_common(train, o);
  train->get_option("--config")->required();
  train->get_option("--seed")->description("Override the training seed");
  train->add_option("--out", o.out, "Run directory")->required();
  train->add_option("--data", o.data, "Dataset file (default: render from the configuration)");
  train->add_option("--baseline", o.baseline, "Third loss term")
      ->check(CLI::IsMember({"mipae", "drnet", "none"}));
  train->add_option("--steps", o.steps, "Override train.steps_phase1");
  train->add_option("--context", o.context, "Override data.context");
  train->add_option("--horizon", o.horizon, "Override data.horizon");

  auto* lstm = app.add_subcommand("train-lstm", "Train the pose predictor on frozen encoders");
  add_common(lstm, o);
  lstm->get_option("--config")->description("Phase-2 settings (default: the checkpoint's)");
  lstm->add_option("--checkpoint", o.checkpoint, "Phase-1 checkpoint")->required();
  lstm->add_option("--out", o.out, "Run directory")->required();
  lstm->add_option("--data", o.data, "Dataset file (default: render from the configuration)");
  lstm->add_option("--steps", o.steps, "Override train.steps_phase2");

  auto* pred = app.add_subcommand("predict", "Predict future frames from context frames");
  pred->add_option("--checkpoint", o.checkpoint, "Trained model")->required();
  pred->add_option("--out", o.out, "Output directory")->required();
  pred->add_option("--data", o.data, "Dataset file (default: the held-out test set)");
  pred->add_option("--context", o.context, "Context frames (must match the checkpoint)");
  pred->add_option("--horizon", o.horizon, "Frames to predict");
  pred->add_option("--clips", o.clips, "Limit the number of clips");
  pred->add_option("--png-clips", o.png_clips, "Clips rendered as PNG strips");

  auto* ev = app.add_subcommand("eval", "Rollout metrics, swap grid and MIG");
  ev->add_option("--checkpoint", o.checkpoint, "Trained model")->required();
  ev->add_option("--out", o.out, "Output directory")->required();
  ev->add_option("--data", o.data, "Test dataset file (default: rendered from eval.test_seed)");
  ev->add_flag("--mig", o.mig, "Also write mig.csv");
  ev->add_flag("--skip-rollout", o.skip_rollout, "Skip PSNR/SSIM rollouts");
  ev->add_option("--label", o.label, "Experiment name in reports (default: the baseline)");

  std::vector<const char*> cargs;
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    check_device();
    if (*gen) return cmd_generate(o, args);
    if (*train) return cmd_train(o, args);
    if (*lstm) return cmd_train_lstm(o, args);
    if (*pred) return cmd_predict(o, args);
    if (*ev) return cmd_eval(o, args);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const IoError& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace mipae::cli
