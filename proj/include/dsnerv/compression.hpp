#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "dsnerv/bytes.hpp"
#include "dsnerv/common.hpp"
#include "dsnerv/decoder.hpp"
#include "dsnerv/huffman.hpp"
#include "dsnerv/json_io.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

// ---------------------------------------------------------------------------
// Global magnitude pruning over decoder conv weights. Code grids and biases
// are exempt. Ties break by (magnitude, tensor order, flat index) so the
// selection is deterministic.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct PruneResult {
  Model<Scalar> model;
  std::vector<std::vector<uint8_t>> masks;  // per tensor, 1 = kept
  int64_t zeroed = 0;
  double achieved = 0.0;  // zeroed / prunable weight count
};

template <typename Scalar>
PruneResult<Scalar> prune(const Model<Scalar>& model, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0))
    throw ConfigError("prune: sparsity must lie in [0, 1)");
  PruneResult<Scalar> out;
  out.model = model;
  out.masks.reserve(model.tensors.size());
  for (const auto& t : model.tensors)
    out.masks.emplace_back(static_cast<size_t>(t.numel()), uint8_t{1});

  struct Candidate {
    double mag;
    int tensor;
    int64_t index;
  };
  std::vector<Candidate> candidates;
  int64_t prunable = 0;
  for (int i = 0; i < model.count(); ++i) {
    if (!model.info(i).prunable) continue;
    const Tensor<Scalar>& t = model.tensor(i);
    prunable += t.numel();
    for (int64_t k = 0; k < t.numel(); ++k)
      candidates.push_back({std::abs(static_cast<double>(t[k])), i, k});
  }
  const int64_t target = static_cast<int64_t>(std::llround(sparsity * static_cast<double>(prunable)));
  if (target > 0) {
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      return std::tie(a.mag, a.tensor, a.index) < std::tie(b.mag, b.tensor, b.index);
    });
    for (int64_t k = 0; k < target; ++k) {
      const Candidate& c = candidates[static_cast<size_t>(k)];
      out.model.tensor(c.tensor)[c.index] = Scalar{0};
      out.masks[static_cast<size_t>(c.tensor)][static_cast<size_t>(c.index)] = 0;
    }
  }
  out.zeroed = target;
  out.achieved = prunable > 0 ? static_cast<double>(target) / static_cast<double>(prunable) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Affine min-max quantization. minimum and scale are exact f32 values (the
// container stores them as f32); the grid covers [min of tensor, max].
// ---------------------------------------------------------------------------

struct QuantizedTensor {
  QuantHint spec;  // minimum/scale hold exact f32 values
  std::vector<uint16_t> symbols;
};

inline void check_quant_bits(int bits) {
  if (bits < 2 || bits > 16)
    throw ConfigError("quantization bits must lie in [2, 16], got " + std::to_string(bits));
}

inline double dequantize_value(const QuantHint& q, uint32_t code) {
  // code * scale is exact in double (<= 40 mantissa bits)
  return q.minimum + static_cast<double>(code) * q.scale;
}

template <typename Scalar>
QuantizedTensor quantize(const Tensor<Scalar>& t, int bits) {
  check_quant_bits(bits);
  if (!t.all_finite()) throw NonFiniteInput("quantize: tensor has non-finite values");
  QuantizedTensor out;
  out.spec.bits = bits;
  out.symbols.resize(static_cast<size_t>(t.numel()));
  if (t.numel() == 0) {
    out.spec.minimum = 0.0;
    out.spec.scale = 1.0;
    return out;
  }
  double vmin = static_cast<double>(t[0]), vmax = vmin;
  for (int64_t i = 1; i < t.numel(); ++i) {
    const double v = static_cast<double>(t[i]);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (vmin == vmax) {
    out.spec.minimum = static_cast<double>(static_cast<float>(vmin));
    out.spec.scale = 1.0;  // constant tensor: every code is 0
    return out;
  }
  float min_f = static_cast<float>(vmin);
  if (static_cast<double>(min_f) > vmin)
    min_f = std::nextafterf(min_f, -std::numeric_limits<float>::infinity());
  const uint32_t levels = (1u << bits) - 1;
  const double span = vmax - static_cast<double>(min_f);
  float scale_f = std::max(static_cast<float>(span / levels), std::numeric_limits<float>::min());
  while (static_cast<double>(scale_f) * levels < span)
    scale_f = std::nextafterf(scale_f, std::numeric_limits<float>::infinity());
  out.spec.minimum = static_cast<double>(min_f);
  out.spec.scale = static_cast<double>(scale_f);
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double v = static_cast<double>(t[i]);
    const int64_t guess =
        std::llround((v - out.spec.minimum) / out.spec.scale);
    int64_t best = -1;
    double best_err = 0.0;
    for (int64_t j = std::max<int64_t>(0, guess - 1);
         j <= std::min<int64_t>(levels, guess + 1); ++j) {
      const double err = std::abs(v - dequantize_value(out.spec, static_cast<uint32_t>(j)));
      if (best < 0 || err < best_err) {
        best = j;
        best_err = err;
      }
    }
    out.symbols[static_cast<size_t>(i)] = static_cast<uint16_t>(best);
  }
  return out;
}

template <typename Scalar>
void dequantize_into(const QuantizedTensor& q, Tensor<Scalar>& t) {
  if (static_cast<int64_t>(q.symbols.size()) != t.numel())
    throw ShapeMismatch("dequantize: " + std::to_string(q.symbols.size()) + " symbols for " +
                        std::to_string(t.numel()) + " elements");
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<Scalar>(dequantize_value(q.spec, q.symbols[static_cast<size_t>(i)]));
}

namespace detail {

// Re-quantization against a known grid: succeeds only if every value sits
// exactly on the grid (or is an exact zero, the post-prune case). Keeping
// the original grid makes compress(decompress(compress(m))) byte-stable.
template <typename Scalar>
bool requantize_on_grid(const Tensor<Scalar>& t, const QuantHint& hint, int bits,
                        QuantizedTensor& out) {
  if (hint.bits != bits) return false;
  if (!(hint.scale > 0.0)) return false;
  const int64_t levels = (1 << bits) - 1;
  out.spec = hint;
  out.symbols.resize(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double v = static_cast<double>(t[i]);
    const int64_t guess = std::llround((v - hint.minimum) / hint.scale);
    int64_t found = -1;
    for (int64_t j = std::max<int64_t>(0, guess - 1); j <= std::min(levels, guess + 1); ++j)
      if (static_cast<Scalar>(dequantize_value(hint, static_cast<uint32_t>(j))) == t[i]) {
        found = j;
        break;
      }
    if (found < 0 && v == 0.0)  // pruned slot: nearest code to zero
      found = std::clamp(static_cast<int64_t>(std::llround(-hint.minimum / hint.scale)),
                         int64_t{0}, levels);
    if (found < 0) return false;
    out.symbols[static_cast<size_t>(i)] = static_cast<uint16_t>(found);
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Bitstream container, little-endian:
//   "DSNV" | u16 version | u32 json len + model description |
//   u32 tensor count | per tensor: name, u32 rank + dims,
//   f32 min, f32 scale, u8 bits, huffman table, u32 payload len + payload.
// Symbol counts are implied by the dims.
// ---------------------------------------------------------------------------

constexpr uint16_t kBitstreamVersion = 1;

template <typename Scalar>
std::vector<uint8_t> compress_model(const Model<Scalar>& model, double sparsity, int bits) {
  check_quant_bits(bits);
  PruneResult<Scalar> pruned = prune(model, sparsity);
  ByteWriter bw;
  bw.bytes(reinterpret_cast<const uint8_t*>("DSNV"), 4);
  bw.u16(kBitstreamVersion);
  bw.str(model_spec_to_json(model.timeline, model.spec).dump());
  bw.u32(static_cast<uint32_t>(model.count()));
  for (int i = 0; i < model.count(); ++i) {
    const Tensor<Scalar>& t = pruned.model.tensor(i);
    QuantizedTensor q;
    const auto& hint = model.hints[static_cast<size_t>(i)];
    if (!hint || !detail::requantize_on_grid(t, *hint, bits, q)) q = quantize(t, bits);
    bw.str(model.info(i).name);
    bw.u32(static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) bw.u32(static_cast<uint32_t>(t.dim(d)));
    bw.f32(static_cast<float>(q.spec.minimum));
    bw.f32(static_cast<float>(q.spec.scale));
    bw.u8(static_cast<uint8_t>(q.spec.bits));
    const HuffmanCodec codec = HuffmanCodec::from_symbols(q.symbols);
    codec.write_table(bw);
    const std::vector<uint8_t> payload = codec.encode(q.symbols);
    bw.u32(static_cast<uint32_t>(payload.size()));
    bw.bytes(payload.data(), payload.size());
  }
  return bw.take();
}

template <typename Scalar>
Model<Scalar> decompress_model(const std::vector<uint8_t>& blob) {
  ByteReader br(blob);
  uint8_t magic[4];
  br.bytes(magic, 4);
  if (std::memcmp(magic, "DSNV", 4) != 0) throw Corrupt("not a model bitstream");
  const uint16_t version = br.u16();
  if (version != kBitstreamVersion)
    throw VersionMismatch("bitstream version " + std::to_string(version) + ", expected " +
                          std::to_string(kBitstreamVersion));
  TimelineConfig tl;
  FusionDecoderSpec spec;
  try {
    const Json j = Json::parse(br.str());
    model_spec_from_json(JsonCursor(j), tl, spec);
  } catch (const Json::exception& e) {
    throw Corrupt(std::string("bad model description: ") + e.what());
  }
  Model<Scalar> m = model_skeleton<Scalar>(tl, spec);
  const uint32_t count = br.u32();
  if (count != static_cast<uint32_t>(m.count()))
    throw Corrupt("bitstream has " + std::to_string(count) + " tensors, model needs " +
                  std::to_string(m.count()));
  for (int i = 0; i < m.count(); ++i) {
    Tensor<Scalar>& t = m.tensor(i);
    const std::string name = br.str();
    if (name != m.info(i).name)
      throw Corrupt("tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                    m.info(i).name + "'");
    const uint32_t rank = br.u32();
    if (rank != static_cast<uint32_t>(t.rank()))
      throw Corrupt("tensor '" + name + "' rank mismatch");
    for (int d = 0; d < t.rank(); ++d)
      if (br.u32() != static_cast<uint32_t>(t.dim(d)))
        throw Corrupt("tensor '" + name + "' shape mismatch");
    QuantizedTensor q;
    q.spec.minimum = static_cast<double>(br.f32());
    q.spec.scale = static_cast<double>(br.f32());
    q.spec.bits = br.u8();
    if (q.spec.bits < 2 || q.spec.bits > 16)
      throw Corrupt("tensor '" + name + "' has " + std::to_string(q.spec.bits) + " bits");
    const HuffmanCodec codec = HuffmanCodec::read_table(br);
    const uint32_t max_symbol = (1u << q.spec.bits) - 1;
    for (const auto& e : codec.entries())
      if (e.symbol > max_symbol)
        throw Corrupt("tensor '" + name + "' symbol exceeds " + std::to_string(q.spec.bits) +
                      " bits");
    const uint32_t payload_len = br.u32();
    if (payload_len > br.remaining()) throw CorruptStream("tensor payload truncated");
    std::vector<uint8_t> payload(payload_len);
    br.bytes(payload.data(), payload_len);
    q.symbols = codec.decode(payload.data(), payload.size(), static_cast<size_t>(t.numel()));
    dequantize_into(q, t);
    m.hints[static_cast<size_t>(i)] = q.spec;
  }
  br.expect_end();
  return m;
}

// ---------------------------------------------------------------------------
// Header-only inspection for reporting.
// ---------------------------------------------------------------------------

struct TensorStreamInfo {
  std::string name;
  std::vector<int> shape;
  int bits = 0;
  uint32_t payload_bytes = 0;
  uint32_t table_entries = 0;
};

struct BitstreamInfo {
  TimelineConfig timeline;
  FusionDecoderSpec decoder;
  std::vector<TensorStreamInfo> tensors;
  size_t total_bytes = 0;
};

inline BitstreamInfo inspect_bitstream(const std::vector<uint8_t>& blob) {
  BitstreamInfo info;
  info.total_bytes = blob.size();
  ByteReader br(blob);
  uint8_t magic[4];
  br.bytes(magic, 4);
  if (std::memcmp(magic, "DSNV", 4) != 0) throw Corrupt("not a model bitstream");
  const uint16_t version = br.u16();
  if (version != kBitstreamVersion)
    throw VersionMismatch("bitstream version " + std::to_string(version) + ", expected " +
                          std::to_string(kBitstreamVersion));
  try {
    const Json j = Json::parse(br.str());
    model_spec_from_json(JsonCursor(j), info.timeline, info.decoder);
  } catch (const Json::exception& e) {
    throw Corrupt(std::string("bad model description: ") + e.what());
  }
  const uint32_t count = br.u32();
  for (uint32_t i = 0; i < count; ++i) {
    TensorStreamInfo ti;
    ti.name = br.str();
    const uint32_t rank = br.u32();
    if (rank > 8) throw Corrupt("tensor '" + ti.name + "' rank " + std::to_string(rank));
    for (uint32_t d = 0; d < rank; ++d) ti.shape.push_back(static_cast<int>(br.u32()));
    br.f32();
    br.f32();
    ti.bits = br.u8();
    const HuffmanCodec codec = HuffmanCodec::read_table(br);
    ti.table_entries = static_cast<uint32_t>(codec.entries().size());
    ti.payload_bytes = br.u32();
    if (ti.payload_bytes > br.remaining()) throw CorruptStream("tensor payload truncated");
    std::vector<uint8_t> skip(ti.payload_bytes);
    br.bytes(skip.data(), ti.payload_bytes);
    info.tensors.push_back(std::move(ti));
  }
  br.expect_end();
  return info;
}

}  // namespace dsnerv
