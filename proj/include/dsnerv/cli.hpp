#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dsnerv/compression.hpp"
#include "dsnerv/config.hpp"
#include "dsnerv/media.hpp"
#include "dsnerv/metrics.hpp"
#include "dsnerv/training.hpp"

namespace dsnerv::cli {

// Removes tracked output files unless disarmed, so failed commands leave no
// partial outputs behind.
class OutputGuard {
 public:
  void track(const fs::path& p) { files_.push_back(p); }
  void disarm() { armed_ = false; }
  ~OutputGuard() {
    if (!armed_) return;
    for (const auto& p : files_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }

 private:
  std::vector<fs::path> files_;
  bool armed_ = true;
};

struct Opts {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string data_dir;
  std::string bitstream;
  std::string input;
  std::string bits = "8";
  double sparsity = 0.0;
  long long seed = -1;  // -1: keep the config's seed
  int threads = 0;      // 0: resolve via DSNERV_THREADS, then 1
};

namespace detail {

inline int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DSNERV_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

inline std::vector<int> parse_bits_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--bits: '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw ConfigError("--bits: empty list");
  return out;
}

inline std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d.ppm", t);
  return buf;
}

inline FrameSequence dataset_for(const Opts& o) {
  if (!o.data_dir.empty()) return load_frames(o.data_dir);
  if (!o.config.empty()) return load_dataset(load_run_config(o.config).data);
  throw ConfigError("need --data or --config to locate the video");
}

inline bool dataset_available(const Opts& o) { return !o.data_dir.empty() || !o.config.empty(); }

inline void check_dataset(const Model<float>& m, const FrameSequence& seq) {
  if (seq.count() != m.timeline.frame_count || seq.h != m.spec.out_h || seq.w != m.spec.out_w)
    throw SpecMismatch("dataset is " + std::to_string(seq.count()) + " frames at " +
                       std::to_string(seq.w) + "x" + std::to_string(seq.h) + ", model wants " +
                       std::to_string(m.timeline.frame_count) + " at " +
                       std::to_string(m.spec.out_w) + "x" + std::to_string(m.spec.out_h));
}

inline std::string fixed6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

inline int cmd_train(const Opts& o) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = load_run_config(o.config);
  if (o.seed >= 0) rc.seed = static_cast<uint64_t>(o.seed);
  if (!o.out.empty()) rc.output = o.out;

  const FrameSequence data = load_dataset(rc.data);
  const TimelineConfig tl = make_timeline(rc.model, data.count());
  const FusionDecoderSpec spec = make_decoder_spec(rc.model, data.h, data.w);
  tl.validate();
  spec.validate();  // fails with the violated invariant named, before any training
  Model<float> model = build_model<float>(tl, spec, rc.seed);
  const TaskSpec task = make_task(rc.task.kind, data.count(), data.h, data.w, &rc.task.mask);
  const std::vector<Tensor<float>> frames = frames_as<float>(data);

  fs::create_directories(rc.output);
  OutputGuard guard;
  const fs::path ckpt_path = fs::path(rc.output) / "checkpoint.dsnc";
  const fs::path log_path = fs::path(rc.output) / "train_log.csv";
  guard.track(ckpt_path);
  guard.track(log_path);

  const TrainLog log = train(model, frames, task, rc.train, resolve_threads(o.threads));
  save_checkpoint(ckpt_path.string(), model);
  write_text_file(log_path.string(), log.to_csv());
  guard.disarm();

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "summary eval_psnr=" << fixed6(log.records.back().eval_psnr)
            << " params=" << param_count(model) << " checkpoint=" << ckpt_path.string() << "\n";
  std::cout << "wall_seconds=" << fixed6(wall) << "\n";
  return 0;
}

// Shared by reconstruct / interpolate / inpaint: decode the task's eval
// frames, optionally score them against the source video.
inline int cmd_decode(const Opts& o, TaskKind kind, const char* label) {
  const Model<float> model = load_checkpoint<float>(o.checkpoint);
  const TaskSpec task = make_task(kind, model.timeline.frame_count);
  const std::vector<int>& indices =
      kind == TaskKind::Interpolation ? task.eval_indices : task.train_indices;

  std::vector<Tensor<float>> decoded;
  decoded.reserve(indices.size());
  for (int t : indices) decoded.push_back(decode_frame(model, static_cast<double>(t)));

  fs::create_directories(fs::path(o.out) / "frames");
  OutputGuard guard;
  for (size_t i = 0; i < indices.size(); ++i) {
    const fs::path p = fs::path(o.out) / "frames" / frame_name(indices[i]);
    guard.track(p);
    save_ppm(p.string(), decoded[i]);
  }

  std::string score;
  if (dataset_available(o)) {
    const FrameSequence data = dataset_for(o);
    check_dataset(model, data);
    std::vector<Tensor<float>> targets;
    targets.reserve(indices.size());
    for (int t : indices) targets.push_back(data.frames[static_cast<size_t>(t)]);
    const QualityReport report = quality_report(decoded, targets);
    const fs::path report_path = fs::path(o.out) / "report.csv";
    guard.track(report_path);
    write_text_file(report_path.string(), report.to_csv(&indices));
    score = " mean_psnr=" + fixed6(report.mean_psnr()) +
            " mean_ms_ssim=" + fixed6(report.mean_msssim());
  }
  guard.disarm();
  std::cout << label << " frames=" << indices.size() << score << " out=" << o.out << "\n";
  return 0;
}

inline int cmd_eval(const Opts& o) {
  const Model<float> model = load_checkpoint<float>(o.checkpoint);
  const FrameSequence data = dataset_for(o);
  check_dataset(model, data);
  std::vector<Tensor<float>> decoded, targets;
  std::vector<int> indices;
  for (int t = 0; t < data.count(); ++t) {
    indices.push_back(t);
    decoded.push_back(decode_frame(model, static_cast<double>(t)));
    targets.push_back(data.frames[static_cast<size_t>(t)]);
  }
  const QualityReport report = quality_report(decoded, targets);
  fs::create_directories(o.out);
  OutputGuard guard;
  const fs::path report_path = fs::path(o.out) / "report.csv";
  guard.track(report_path);
  write_text_file(report_path.string(), report.to_csv(&indices));
  guard.disarm();
  std::cout << "eval mean_psnr=" << fixed6(report.mean_psnr())
            << " mean_ms_ssim=" << fixed6(report.mean_msssim()) << " frames=" << indices.size()
            << "\n";
  return 0;
}

inline int cmd_compress(const Opts& o) {
  const Model<float> model = load_checkpoint<float>(o.checkpoint);
  const std::vector<int> bits_list = parse_bits_list(o.bits);
  std::vector<Tensor<float>> frames;
  std::vector<int> all_indices;
  if (dataset_available(o)) {
    const FrameSequence data = dataset_for(o);
    check_dataset(model, data);
    frames = frames_as<float>(data);
    for (int t = 0; t < data.count(); ++t) all_indices.push_back(t);
  }

  fs::create_directories(o.out);
  OutputGuard guard;
  std::ostringstream csv;
  csv << "bits,sparsity,bytes,bpp,psnr\n";
  const TimelineConfig& tl = model.timeline;
  for (int b : bits_list) {
    const std::vector<uint8_t> blob = compress_model(model, o.sparsity, b);
    const fs::path p = fs::path(o.out) / ("model_b" + std::to_string(b) + ".dsnv");
    guard.track(p);
    write_file(p.string(), blob);
    const double bpp = bits_per_pixel(static_cast<int64_t>(blob.size()), tl.frame_count,
                                      model.spec.out_h, model.spec.out_w);
    csv << b << ',' << o.sparsity << ',' << blob.size() << ',' << fixed6(bpp);
    std::string psnr_text;
    if (!frames.empty()) {
      const Model<float> restored = decompress_model<float>(blob);
      const double psnr = eval_psnr(restored, frames, all_indices);
      csv << ',' << fixed6(psnr);
      psnr_text = " psnr=" + fixed6(psnr);
    } else {
      csv << ',';
    }
    csv << '\n';
    std::cout << "bits=" << b << " bytes=" << blob.size() << " bpp=" << fixed6(bpp) << psnr_text
              << "\n";
  }
  const fs::path csv_path = fs::path(o.out) / "rate_distortion.csv";
  guard.track(csv_path);
  write_text_file(csv_path.string(), csv.str());
  guard.disarm();
  return 0;
}

inline int cmd_decompress(const Opts& o) {
  const std::vector<uint8_t> blob = read_file(o.bitstream);
  const Model<float> model = decompress_model<float>(blob);
  fs::create_directories(o.out);
  OutputGuard guard;
  const fs::path ckpt_path = fs::path(o.out) / "checkpoint.dsnc";
  guard.track(ckpt_path);
  save_checkpoint(ckpt_path.string(), model);
  guard.disarm();
  std::cout << "decompressed params=" << param_count(model) << " checkpoint="
            << ckpt_path.string() << "\n";
  return 0;
}

inline void print_spec(std::ostream& os, const TimelineConfig& tl, const FusionDecoderSpec& d) {
  os << "frames=" << tl.frame_count << " static_codes=" << tl.static_count
     << " dynamic_codes=" << tl.dynamic_count << "\n";
  os << "static_shape=" << d.static_shape.h << 'x' << d.static_shape.w << 'x' << d.static_shape.dim
     << " dynamic_shape=" << d.dynamic_shape.h << 'x' << d.dynamic_shape.w << 'x'
     << d.dynamic_shape.dim << "\n";
  os << "c1=" << d.c1 << " ch_min=" << d.ch_min << " strides=";
  for (size_t i = 0; i < d.strides.size(); ++i) os << (i ? "," : "") << d.strides[i];
  os << " output=" << d.out_w << 'x' << d.out_h << "\n";
}

inline int cmd_info(const Opts& o) {
  const std::vector<uint8_t> head = read_file(o.input);
  if (head.size() >= 4 && std::memcmp(head.data(), "DSNC", 4) == 0) {
    const Model<float> model = load_checkpoint<float>(o.input);
    const int64_t total = param_count(model);
    const int64_t grids = model.tensor(Model<float>::kStatic).numel() +
                          model.tensor(Model<float>::kDynamic).numel();
    std::cout << "checkpoint " << o.input << "\n";
    print_spec(std::cout, model.timeline, model.spec);
    std::cout << "params=" << total << " grid_params=" << grids << " grid_share="
              << fixed6(static_cast<double>(grids) / static_cast<double>(total)) << "\n";
    return 0;
  }
  if (head.size() >= 4 && std::memcmp(head.data(), "DSNV", 4) == 0) {
    const BitstreamInfo info = inspect_bitstream(head);
    std::cout << "bitstream " << o.input << "\n";
    print_spec(std::cout, info.timeline, info.decoder);
    for (const auto& t : info.tensors)
      std::cout << t.name << " shape=" << shape_to_string(t.shape) << " bits=" << t.bits
                << " payload_bytes=" << t.payload_bytes << "\n";
    const double bpp = bits_per_pixel(static_cast<int64_t>(info.total_bytes),
                                      info.timeline.frame_count, info.decoder.out_h,
                                      info.decoder.out_w);
    std::cout << "total_bytes=" << info.total_bytes << " bpp=" << fixed6(bpp) << "\n";
    return 0;
  }
  throw Corrupt(o.input + ": neither a checkpoint nor a bitstream");
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  CLI::App app{"video representation toolkit: dual code grids + fusion decoder"};
  app.require_subcommand(1);
  Opts o;

  auto add_threads = [&](CLI::App* cmd) {
    cmd->add_option("--threads,-t", o.threads, "worker threads (env DSNERV_THREADS, default 1)");
  };

  CLI::App* train = app.add_subcommand("train", "fit a model to a video");
  train->add_option("--config,-c", o.config, "run config JSON")->required();
  train->add_option("--seed", o.seed, "override the config seed");
  train->add_option("--out,-o", o.out, "override the config output directory");
  add_threads(train);

  auto add_decode_opts = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
    cmd->add_option("--out,-o", o.out, "output directory")->required();
    cmd->add_option("--data", o.data_dir, "source frames directory (for scoring)");
    cmd->add_option("--config,-c", o.config, "run config locating the video (for scoring)");
    add_threads(cmd);
  };
  CLI::App* reconstruct = app.add_subcommand("reconstruct", "decode every frame");
  add_decode_opts(reconstruct);
  CLI::App* interpolate = app.add_subcommand("interpolate", "decode held-out odd frames");
  add_decode_opts(interpolate);
  CLI::App* inpaint = app.add_subcommand("inpaint", "decode full frames from a masked-training model");
  add_decode_opts(inpaint);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against the video");
  eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  eval->add_option("--out,-o", o.out, "output directory")->required();
  eval->add_option("--data", o.data_dir, "source frames directory");
  eval->add_option("--config,-c", o.config, "run config locating the video");

  CLI::App* compress = app.add_subcommand("compress", "emit compact bitstreams");
  compress->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  compress->add_option("--out,-o", o.out, "output directory")->required();
  compress->add_option("--sparsity", o.sparsity, "prune fraction in [0,1)");
  compress->add_option("--bits", o.bits, "quantization bits, comma list (default 8)");
  compress->add_option("--data", o.data_dir, "source frames directory (adds PSNR column)");
  compress->add_option("--config,-c", o.config, "run config locating the video");

  CLI::App* decompress = app.add_subcommand("decompress", "bitstream back to a checkpoint");
  decompress->add_option("--bitstream", o.bitstream, "compressed model")->required();
  decompress->add_option("--out,-o", o.out, "output directory")->required();

  CLI::App* info = app.add_subcommand("info", "describe a checkpoint or bitstream");
  info->add_option("--input,-i", o.input, "checkpoint or bitstream path")->required();

  try {
    app.parse(argc, argv);
    if (train->parsed()) return detail::cmd_train(o);
    if (reconstruct->parsed()) return detail::cmd_decode(o, TaskKind::Reconstruction, "reconstruct");
    if (interpolate->parsed()) return detail::cmd_decode(o, TaskKind::Interpolation, "interpolate");
    if (inpaint->parsed()) return detail::cmd_decode(o, TaskKind::Inpainting, "inpaint");
    if (eval->parsed()) return detail::cmd_eval(o);
    if (compress->parsed()) return detail::cmd_compress(o);
    if (decompress->parsed()) return detail::cmd_decompress(o);
    if (info->parsed()) return detail::cmd_info(o);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

// Test entry point; args exclude the program name.
inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"dsnerv"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dsnerv::cli
