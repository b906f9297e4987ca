#pragma once

#include <string>
#include <vector>

#include "dsnerv/codes.hpp"
#include "dsnerv/common.hpp"
#include "dsnerv/decoder.hpp"
#include "dsnerv/json_io.hpp"
#include "dsnerv/media.hpp"
#include "dsnerv/training.hpp"

namespace dsnerv {

// ---------------------------------------------------------------------------
// Declarative run configuration. Field errors carry full JSON paths.
// ---------------------------------------------------------------------------

struct DataConfig {
  enum class Kind { Synthetic, Frames };
  Kind kind = Kind::Synthetic;
  SynthKind synth_kind = SynthKind::StaticPlusMovingSquare;
  SynthParams synth;
  std::string path;  // frames directory
  int resize_h = 0;  // 0 keeps the native size
  int resize_w = 0;
};

struct ModelConfig {
  int static_count = 0;
  int dynamic_count = 0;
  CodeShape static_shape;
  CodeShape dynamic_shape;
  int c1 = 0;
  int ch_min = 0;
  std::vector<int> strides;
  double channel_reduction = 1.2;
  int head_kernel = 1;
};

struct TaskConfig {
  TaskKind kind = TaskKind::Reconstruction;
  MaskSpec mask;
};

struct RunConfig {
  uint64_t seed = 1;
  std::string output = "out";
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  TaskConfig task;
};

inline DataConfig data_config_from_json(const JsonCursor& c) {
  DataConfig d;
  const std::string kind = c.at("kind").get_string();
  if (kind == "synthetic") {
    d.kind = DataConfig::Kind::Synthetic;
    const JsonCursor s = c.at("synthetic");
    d.synth_kind = synth_kind_from_string(s.at("name").get_string());
    d.synth.frames = static_cast<int>(s.at("frames").get_int());
    d.synth.h = static_cast<int>(s.at("h").get_int());
    d.synth.w = static_cast<int>(s.at("w").get_int());
    d.synth.seed = static_cast<uint64_t>(s.get_int_or("seed", 7));
    d.synth.square_x = s.get_double_or("square_x", d.synth.square_x);
    d.synth.square_y = s.get_double_or("square_y", d.synth.square_y);
    d.synth.square_vx = s.get_double_or("square_vx", d.synth.square_vx);
    d.synth.square_vy = s.get_double_or("square_vy", d.synth.square_vy);
    d.synth.square_size = static_cast<int>(s.get_int_or("square_size", 0));
    d.synth.pan_vx = s.get_double_or("pan_vx", d.synth.pan_vx);
    d.synth.pan_vy = s.get_double_or("pan_vy", d.synth.pan_vy);
    d.synth.ball_speed = s.get_double_or("ball_speed", d.synth.ball_speed);
  } else if (kind == "frames") {
    d.kind = DataConfig::Kind::Frames;
    d.path = c.at("path").get_string();
    d.resize_h = static_cast<int>(c.get_int_or("resize_h", 0));
    d.resize_w = static_cast<int>(c.get_int_or("resize_w", 0));
    if ((d.resize_h == 0) != (d.resize_w == 0))
      throw ConfigError(c.path() + ": resize_h and resize_w must be set together");
  } else {
    throw ConfigError(c.path() + ".kind: expected 'synthetic' or 'frames'");
  }
  return d;
}

inline ModelConfig model_config_from_json(const JsonCursor& c) {
  ModelConfig m;
  m.static_count = static_cast<int>(c.at("static_count").get_int());
  m.dynamic_count = static_cast<int>(c.at("dynamic_count").get_int());
  m.static_shape = code_shape_from_json(c.at("static_shape"));
  m.dynamic_shape = code_shape_from_json(c.at("dynamic_shape"));
  m.c1 = static_cast<int>(c.at("c1").get_int());
  m.ch_min = static_cast<int>(c.at("ch_min").get_int());
  m.strides = c.at("strides").get_int_array();
  m.channel_reduction = c.get_double_or("channel_reduction", 1.2);
  m.head_kernel = static_cast<int>(c.get_int_or("head_kernel", 1));
  return m;
}

inline TrainConfig train_config_from_json(const JsonCursor& c) {
  TrainConfig t;
  t.epochs = static_cast<int>(c.get_int_or("epochs", t.epochs));
  t.batch_size = static_cast<int>(c.get_int_or("batch_size", t.batch_size));
  t.base_lr = c.get_double_or("base_lr", t.base_lr);
  t.code_lr_multiplier = c.get_double_or("code_lr_multiplier", t.code_lr_multiplier);
  t.beta1 = c.get_double_or("beta1", t.beta1);
  t.beta2 = c.get_double_or("beta2", t.beta2);
  t.beta3 = c.get_double_or("beta3", t.beta3);
  t.weight_decay = c.get_double_or("weight_decay", t.weight_decay);
  t.warmup_ratio = c.get_double_or("warmup_ratio", t.warmup_ratio);
  t.validate();
  return t;
}

inline TaskConfig task_config_from_json(const JsonCursor& c) {
  TaskConfig t;
  t.kind = task_kind_from_string(c.at("kind").get_string());
  if (c.has("mask")) {
    const JsonCursor m = c.at("mask");
    t.mask.kind = mask_kind_from_string(m.at("kind").get_string());
    t.mask.seed = static_cast<uint64_t>(m.get_int_or("seed", 11));
    t.mask.box = static_cast<int>(m.get_int_or("box", 50));
    t.mask.boxes = static_cast<int>(m.get_int_or("boxes", 5));
  }
  return t;
}

inline RunConfig run_config_from_json(const Json& j) {
  const JsonCursor root(j);
  RunConfig rc;
  rc.seed = static_cast<uint64_t>(root.get_int_or("seed", 1));
  rc.output = root.get_string_or("output", "out");
  rc.data = data_config_from_json(root.at("data"));
  rc.model = model_config_from_json(root.at("model"));
  rc.train = root.has("train") ? train_config_from_json(root.at("train")) : TrainConfig{};
  rc.task = root.has("task") ? task_config_from_json(root.at("task")) : TaskConfig{};
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  const std::vector<uint8_t> text = read_file(path);
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const Json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Model pieces resolved against the loaded dataset.
inline TimelineConfig make_timeline(const ModelConfig& m, int frame_count) {
  return TimelineConfig{frame_count, m.static_count, m.dynamic_count};
}

inline FusionDecoderSpec make_decoder_spec(const ModelConfig& m, int out_h, int out_w) {
  FusionDecoderSpec d;
  d.c1 = m.c1;
  d.ch_min = m.ch_min;
  d.strides = m.strides;
  d.channel_reduction = m.channel_reduction;
  d.head_kernel = m.head_kernel;
  d.static_shape = m.static_shape;
  d.dynamic_shape = m.dynamic_shape;
  d.out_h = out_h;
  d.out_w = out_w;
  return d;
}

inline FrameSequence load_dataset(const DataConfig& d) {
  if (d.kind == DataConfig::Kind::Synthetic) return synth_video(d.synth_kind, d.synth);
  return load_frames(d.path, d.resize_h, d.resize_w);
}

}  // namespace dsnerv
