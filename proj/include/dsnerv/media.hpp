#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dsnerv/bytes.hpp"
#include "dsnerv/common.hpp"
#include "dsnerv/decoder.hpp"
#include "dsnerv/json_io.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// File helpers.
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnreadableFile("cannot open " + path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  if (in.bad()) throw UnreadableFile("read failed for " + path);
  return data;
}

inline void write_file(const std::string& path, const uint8_t* data, size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
  out.flush();
  if (!out) throw IoFailure("write failed for " + path);
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& data) {
  write_file(path, data.data(), data.size());
}

inline void write_text_file(const std::string& path, const std::string& text) {
  write_file(path, reinterpret_cast<const uint8_t*>(text.data()), text.size());
}

// ---------------------------------------------------------------------------
// Frames. Pixels are channel-first [3, h, w] floats in [0, 1].
// ---------------------------------------------------------------------------

struct FrameSequence {
  int h = 0;
  int w = 0;
  std::vector<Tensor<float>> frames;

  int count() const { return static_cast<int>(frames.size()); }
};

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255).
// ---------------------------------------------------------------------------

namespace detail {

// Whitespace/comment-aware header tokenizer.
struct PpmScanner {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      if (std::isspace(buf[pos])) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::string token(const std::string& what, const std::string& path) {
    skip_space_and_comments();
    size_t start = pos;
    while (pos < buf.size() && !std::isspace(buf[pos]) && buf[pos] != '#') ++pos;
    if (pos == start) throw UnreadableFile(path + ": missing " + what + " in ppm header");
    return std::string(buf.begin() + static_cast<ptrdiff_t>(start),
                       buf.begin() + static_cast<ptrdiff_t>(pos));
  }

  int int_token(const std::string& what, const std::string& path) {
    const std::string t = token(what, path);
    try {
      size_t used = 0;
      const int v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw UnreadableFile(path + ": bad " + what + " '" + t + "' in ppm header");
    }
  }
};

}  // namespace detail

inline Tensor<float> load_ppm(const std::string& path) {
  const std::vector<uint8_t> buf = read_file(path);
  detail::PpmScanner sc{buf};
  if (sc.token("magic", path) != "P6") throw UnreadableFile(path + ": not a P6 ppm");
  const int w = sc.int_token("width", path);
  const int h = sc.int_token("height", path);
  const int maxval = sc.int_token("maxval", path);
  if (w < 1 || h < 1) throw UnreadableFile(path + ": bad ppm dimensions");
  if (maxval != 255) throw UnreadableFile(path + ": only maxval 255 is supported");
  ++sc.pos;  // single whitespace byte separates header and samples
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (sc.pos + need > buf.size()) throw UnreadableFile(path + ": truncated ppm payload");
  Tensor<float> frame({3, h, w});
  const uint8_t* px = buf.data() + sc.pos;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        frame.at(c, y, x) = static_cast<float>(px[(static_cast<size_t>(y) * w + x) * 3 + c]) /
                            255.0f;
  return frame;
}

inline void save_ppm(const std::string& path, const Tensor<float>& frame) {
  if (frame.rank() != 3 || frame.dim(0) != 3)
    throw ShapeMismatch("save_ppm expects [3, h, w], got " + shape_to_string(frame.shape));
  const int h = frame.dim(1), w = frame.dim(2);
  std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<uint8_t> out(header.size() + static_cast<size_t>(h) * w * 3);
  std::copy(header.begin(), header.end(), out.begin());
  uint8_t* px = out.data() + header.size();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::llround(static_cast<double>(frame.at(c, y, x)) * 255.0);
        px[(static_cast<size_t>(y) * w + x) * 3 + c] =
            static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Directory IO. Frames are numbered %05d.ppm on save; on load, .ppm files
// with all-digit stems sort numerically, otherwise by name.
// ---------------------------------------------------------------------------

inline void save_frames(const std::string& dir, const FrameSequence& seq) {
  fs::create_directories(dir);
  char name[32];
  for (int i = 0; i < seq.count(); ++i) {
    std::snprintf(name, sizeof(name), "%05d.ppm", i);
    save_ppm((fs::path(dir) / name).string(), seq.frames[static_cast<size_t>(i)]);
  }
}

namespace detail {

inline bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

// Bilinear sample of a crop window (half-pixel centers) resized to th x tw.
inline Tensor<float> crop_resize(const Tensor<float>& src, int y0, int x0, int ch, int cw, int th,
                                 int tw) {
  Tensor<float> dst({3, th, tw});
  const double sy = static_cast<double>(ch) / th;
  const double sx = static_cast<double>(cw) / tw;
  for (int y = 0; y < th; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(ch - 1));
    const int iy = static_cast<int>(fy);
    const int iy1 = std::min(iy + 1, ch - 1);
    const double wy = fy - iy;
    for (int x = 0; x < tw; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(cw - 1));
      const int ix = static_cast<int>(fx);
      const int ix1 = std::min(ix + 1, cw - 1);
      const double wx = fx - ix;
      for (int c = 0; c < 3; ++c) {
        const double v00 = src.at(c, y0 + iy, x0 + ix);
        const double v01 = src.at(c, y0 + iy, x0 + ix1);
        const double v10 = src.at(c, y0 + iy1, x0 + ix);
        const double v11 = src.at(c, y0 + iy1, x0 + ix1);
        const double top = v00 + (v01 - v00) * wx;
        const double bot = v10 + (v11 - v10) * wx;
        dst.at(c, y, x) = static_cast<float>(top + (bot - top) * wy);
      }
    }
  }
  return dst;
}

inline Tensor<float> fit_frame(const Tensor<float>& src, int th, int tw) {
  const int h = src.dim(1), w = src.dim(2);
  if (h == th && w == tw) return src;
  // center-crop to the target aspect, then resize
  const double want = static_cast<double>(tw) / th;
  const double have = static_cast<double>(w) / h;
  int ch = h, cw = w;
  if (have > want)
    cw = std::max(1, static_cast<int>(std::llround(h * want)));
  else if (have < want)
    ch = std::max(1, static_cast<int>(std::llround(w / want)));
  return crop_resize(src, (h - ch) / 2, (w - cw) / 2, ch, cw, th, tw);
}

}  // namespace detail

// Loads every .ppm in dir. target_h/target_w of 0 keep the native size.
inline FrameSequence load_frames(const std::string& dir, int target_h = 0, int target_w = 0) {
  if (!fs::is_directory(dir)) throw EmptyDirectory(dir + " is not a directory");
  std::vector<std::pair<std::string, std::string>> entries;  // (stem, path)
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext != ".ppm") continue;
    entries.emplace_back(e.path().stem().string(), e.path().string());
  }
  if (entries.empty()) throw EmptyDirectory("no .ppm frames in " + dir);
  if (entries.size() < 2)
    throw EmptyDirectory("only one frame in " + dir + "; a video needs at least two");
  bool numeric = true;
  for (const auto& [stem, path] : entries)
    if (!detail::all_digits(stem)) numeric = false;
  if (numeric) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      const long long va = std::stoll(a.first), vb = std::stoll(b.first);
      return va != vb ? va < vb : a.first < b.first;
    });
  } else {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
  }

  FrameSequence seq;
  for (const auto& [stem, path] : entries) {
    Tensor<float> f = load_ppm(path);
    if (seq.frames.empty()) {
      if (target_h > 0 && target_w > 0) {
        seq.h = target_h;
        seq.w = target_w;
      } else {
        seq.h = f.dim(1);
        seq.w = f.dim(2);
      }
    } else if (f.dim(1) != seq.frames.front().dim(1) || f.dim(2) != seq.frames.front().dim(2)) {
      // compare native sizes only when not resampling to a fixed target
      if (!(target_h > 0 && target_w > 0))
        throw InconsistentResolution(path + ": " + std::to_string(f.dim(2)) + "x" +
                                     std::to_string(f.dim(1)) + " differs from first frame");
    }
    seq.frames.push_back(detail::fit_frame(f, seq.h, seq.w));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Synthetic clips for tests and demos.
// ---------------------------------------------------------------------------

enum class SynthKind { StaticPlusMovingSquare, TexturedPan, HighMotionNoiseBall };

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "static_plus_moving_square") return SynthKind::StaticPlusMovingSquare;
  if (s == "textured_pan") return SynthKind::TexturedPan;
  if (s == "high_motion_noise_ball") return SynthKind::HighMotionNoiseBall;
  throw ConfigError("unknown synthetic clip kind '" + s + "'");
}

struct SynthParams {
  int frames = 8;
  int h = 32;
  int w = 64;
  uint64_t seed = 7;
  // moving square
  double square_x = 1.0;
  double square_y = 1.0;
  double square_vx = 2.0;
  double square_vy = 1.0;
  int square_size = 0;  // 0 -> h / 6, at least 3
  // pan velocity, pixels per frame
  double pan_vx = 0.7;
  double pan_vy = 0.35;
  // ball speed, pixels per frame; 0 -> 1.25 * w / frames
  double ball_speed = 0.0;
};

namespace detail {

// Triangle-wave reflection of x into [0, limit].
inline double reflect(double x, double limit) {
  if (limit <= 0.0) return 0.0;
  double q = std::fmod(x, 2.0 * limit);
  if (q < 0.0) q += 2.0 * limit;
  return q <= limit ? q : 2.0 * limit - q;
}

inline uint64_t pixel_hash(uint64_t seed, int y, int x) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (static_cast<uint64_t>(y) * 0x100000001ull +
                                               static_cast<uint64_t>(x) + 1ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

inline FrameSequence synth_video(SynthKind kind, const SynthParams& p) {
  if (p.frames < 1 || p.h < 4 || p.w < 4)
    throw ConfigError("synthetic clip needs frames >= 1 and at least 4x4 pixels");
  FrameSequence seq;
  seq.h = p.h;
  seq.w = p.w;
  seq.frames.reserve(static_cast<size_t>(p.frames));

  const double phi[3] = {0.0, 2.1, 4.2};
  const double psi[3] = {1.0, 3.1, 5.2};
  constexpr double tau = 6.283185307179586;

  for (int t = 0; t < p.frames; ++t) {
    Tensor<float> f({3, p.h, p.w});
    switch (kind) {
      case SynthKind::StaticPlusMovingSquare: {
        const int size = p.square_size > 0 ? p.square_size : std::max(3, p.h / 6);
        const double sy =
            detail::reflect(p.square_y + p.square_vy * t, static_cast<double>(p.h - size));
        const double sx =
            detail::reflect(p.square_x + p.square_vx * t, static_cast<double>(p.w - size));
        const int y0 = static_cast<int>(std::llround(sy));
        const int x0 = static_cast<int>(std::llround(sx));
        const double square_rgb[3] = {0.95, 0.25, 0.2};
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
              const bool inside = y >= y0 && y < y0 + size && x >= x0 && x < x0 + size;
              const double bg = 0.45 + 0.25 * std::sin(tau * x / p.w + phi[c]) *
                                           std::cos(tau * y / p.h + psi[c]);
              f.at(c, y, x) = static_cast<float>(inside ? square_rgb[c] : bg);
            }
        break;
      }
      case SynthKind::TexturedPan: {
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
              const double u = (x + p.pan_vx * t) / p.w;
              const double v = (y + p.pan_vy * t) / p.h;
              const double val = 0.5 + 0.22 * std::sin(tau * (3.0 * u) + phi[c]) *
                                           std::sin(tau * (2.0 * v) + psi[c]) +
                                 0.12 * std::sin(tau * 5.0 * (u + v) + 0.7 * c);
              f.at(c, y, x) = static_cast<float>(val);
            }
        break;
      }
      case SynthKind::HighMotionNoiseBall: {
        const double speed = p.ball_speed > 0.0 ? p.ball_speed : 1.25 * p.w / p.frames;
        const double r = std::max(3.0, p.h / 8.0);
        const double cy = detail::reflect(r + 0.6 * speed * t, p.h - 2.0 * r) + r;
        const double cx = detail::reflect(r + speed * t, p.w - 2.0 * r) + r;
        const double ball_rgb[3] = {0.9, 0.9, 0.3};
        for (int y = 0; y < p.h; ++y)
          for (int x = 0; x < p.w; ++x) {
            const double noise =
                0.35 + 0.3 * (static_cast<double>(detail::pixel_hash(p.seed, y, x) >> 11) *
                              0x1.0p-53);
            const double d = std::hypot(y - cy, x - cx);
            const double cover = std::clamp(r + 0.5 - d, 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
              f.at(c, y, x) = static_cast<float>(noise + (ball_rgb[c] - noise) * cover);
          }
        break;
      }
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Masks. A mask is [h, w] with 1 = visible, 0 = hidden.
// ---------------------------------------------------------------------------

enum class MaskKind { Central, Disperse };

inline MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "central") return MaskKind::Central;
  if (s == "disperse") return MaskKind::Disperse;
  throw ConfigError("unknown mask kind '" + s + "'");
}

struct MaskSpec {
  MaskKind kind = MaskKind::Central;
  uint64_t seed = 11;
  int box = 50;    // disperse box side
  int boxes = 5;   // disperse boxes per frame
};

// One mask per frame. Central: a fixed h/4 x w/4 box hidden in every frame.
// Disperse: per-frame random non-overlapping boxes.
inline std::vector<Tensor<float>> make_masks(const MaskSpec& spec, int frames, int h, int w) {
  if (h < 1 || w < 1)
    throw ConfigError("masks need a frame geometry, got " + std::to_string(w) + "x" +
                      std::to_string(h));
  std::vector<Tensor<float>> masks;
  masks.reserve(static_cast<size_t>(frames));
  if (spec.kind == MaskKind::Central) {
    const int bh = std::max(1, h / 4), bw = std::max(1, w / 4);
    const int y0 = (h - bh) / 2, x0 = (w - bw) / 2;
    Tensor<float> m({h, w});
    m.fill(1.0f);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) m[static_cast<int64_t>(y) * w + x] = 0.0f;
    for (int t = 0; t < frames; ++t) masks.push_back(m);
    return masks;
  }
  if (spec.box > h || spec.box > w)
    throw MaskTooLarge("disperse mask box " + std::to_string(spec.box) + " exceeds frame " +
                       std::to_string(w) + "x" + std::to_string(h));
  Rng rng(spec.seed);
  for (int t = 0; t < frames; ++t) {
    Tensor<float> m({h, w});
    m.fill(1.0f);
    std::vector<std::pair<int, int>> placed;
    for (int b = 0; b < spec.boxes; ++b) {
      bool ok = false;
      for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
        const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h - spec.box + 1)));
        const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w - spec.box + 1)));
        ok = true;
        for (const auto& [py, px] : placed)
          if (std::abs(py - y0) < spec.box && std::abs(px - x0) < spec.box) {
            ok = false;
            break;
          }
        if (ok) placed.emplace_back(y0, x0);
      }
      if (!ok)
        throw MaskTooLarge("cannot place " + std::to_string(spec.boxes) +
                           " non-overlapping boxes of side " + std::to_string(spec.box) + " in " +
                           std::to_string(w) + "x" + std::to_string(h));
    }
    for (const auto& [y0, x0] : placed)
      for (int y = y0; y < y0 + spec.box; ++y)
        for (int x = x0; x < x0 + spec.box; ++x) m[static_cast<int64_t>(y) * w + x] = 0.0f;
    masks.push_back(std::move(m));
  }
  return masks;
}

inline Tensor<float> apply_mask(const Tensor<float>& frame, const Tensor<float>& mask) {
  if (frame.rank() != 3 || mask.rank() != 2 || frame.dim(1) != mask.dim(0) ||
      frame.dim(2) != mask.dim(1))
    throw ShapeMismatch("apply_mask: frame " + shape_to_string(frame.shape) + " vs mask " +
                        shape_to_string(mask.shape));
  Tensor<float> out = frame;
  const int64_t plane = mask.numel();
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < plane; ++i) out[c * plane + i] *= mask[i];
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: raw f32 tensors plus the model description. Saving a float
// model and loading it back is bit-exact.
// ---------------------------------------------------------------------------

constexpr uint16_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& m) {
  ByteWriter bw;
  bw.bytes(reinterpret_cast<const uint8_t*>("DSNC"), 4);
  bw.u16(kCheckpointVersion);
  Json header = model_spec_to_json(m.timeline, m.spec);
  Json hints = Json::array();  // quantization grids survive checkpointing
  for (int i = 0; i < m.count(); ++i)
    if (m.hints[static_cast<size_t>(i)]) {
      const QuantHint& h = *m.hints[static_cast<size_t>(i)];
      hints.push_back(Json{{"tensor", i},
                           {"minimum", h.minimum},
                           {"scale", h.scale},
                           {"bits", h.bits}});
    }
  if (!hints.empty()) header["quant_hints"] = hints;
  bw.str(header.dump());
  bw.u32(static_cast<uint32_t>(m.count()));
  for (int i = 0; i < m.count(); ++i) {
    const Tensor<Scalar>& t = m.tensor(i);
    bw.str(m.info(i).name);
    bw.u32(static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) bw.u32(static_cast<uint32_t>(t.dim(d)));
    for (int64_t k = 0; k < t.numel(); ++k) bw.f32(static_cast<float>(t[k]));
  }
  write_file(path, bw.data());
}

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> buf = read_file(path);
  ByteReader br(buf);
  uint8_t magic[4];
  br.bytes(magic, 4);
  if (std::memcmp(magic, "DSNC", 4) != 0) throw Corrupt(path + ": not a checkpoint");
  const uint16_t version = br.u16();
  if (version != kCheckpointVersion)
    throw VersionMismatch(path + ": checkpoint version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  TimelineConfig tl;
  FusionDecoderSpec spec;
  Json header;
  try {
    header = Json::parse(br.str());
    model_spec_from_json(JsonCursor(header), tl, spec);
  } catch (const Json::exception& e) {
    throw Corrupt(path + ": bad model description: " + e.what());
  }
  Model<Scalar> m = model_skeleton<Scalar>(tl, spec);
  if (header.contains("quant_hints")) {
    const JsonCursor hints(header["quant_hints"], "$.quant_hints");
    for (size_t i = 0; i < hints.size(); ++i) {
      const JsonCursor h = hints.at(i);
      const int idx = static_cast<int>(h.at("tensor").get_int());
      if (idx < 0 || idx >= m.count()) throw Corrupt(path + ": quant hint tensor out of range");
      QuantHint q;
      q.minimum = h.at("minimum").get_double();
      q.scale = h.at("scale").get_double();
      q.bits = static_cast<int>(h.at("bits").get_int());
      m.hints[static_cast<size_t>(idx)] = q;
    }
  }
  const uint32_t count = br.u32();
  if (count != static_cast<uint32_t>(m.count()))
    throw Corrupt(path + ": has " + std::to_string(count) + " tensors, model needs " +
                  std::to_string(m.count()));
  for (int i = 0; i < m.count(); ++i) {
    Tensor<Scalar>& t = m.tensor(i);
    const std::string name = br.str();
    if (name != m.info(i).name)
      throw Corrupt(path + ": tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                    m.info(i).name + "'");
    const uint32_t rank = br.u32();
    if (rank != static_cast<uint32_t>(t.rank()))
      throw Corrupt(path + ": tensor '" + name + "' rank mismatch");
    for (int d = 0; d < t.rank(); ++d)
      if (br.u32() != static_cast<uint32_t>(t.dim(d)))
        throw Corrupt(path + ": tensor '" + name + "' shape mismatch");
    for (int64_t k = 0; k < t.numel(); ++k) t[k] = static_cast<Scalar>(br.f32());
  }
  br.expect_end();
  return m;
}

}  // namespace dsnerv
