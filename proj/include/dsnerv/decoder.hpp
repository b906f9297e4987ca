#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dsnerv/codes.hpp"
#include "dsnerv/common.hpp"
#include "dsnerv/ops.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

// ---------------------------------------------------------------------------
// Decoder specification. The decoder aligns both sampled codes to a common
// c1-channel resolution (the dynamic code's spatial size), fuses them with
// cross-channel attention, then upsamples with conv + pixel-shuffle + GELU
// blocks down a tapering channel schedule until the output resolution.
// ---------------------------------------------------------------------------

struct NervBlockSpec {
  int in_channels = 0;
  int out_channels = 0;
  int upscale = 1;
  int kernel = 3;

  // Conv output channels before the pixel shuffle.
  int conv_channels() const { return out_channels * upscale * upscale; }

  int64_t parameter_count() const {
    return static_cast<int64_t>(conv_channels()) * in_channels * kernel * kernel +
           conv_channels();
  }
};

struct FusionDecoderSpec {
  int c1 = 0;                      // fused channel width
  int ch_min = 0;                  // floor for the tapering schedule
  std::vector<int> strides;        // strides[0] aligns the static path
  double channel_reduction = 1.2;  // width divisor per upsampling block
  int head_kernel = 1;
  CodeShape static_shape;
  CodeShape dynamic_shape;
  int out_h = 0;
  int out_w = 0;

  int upsample_blocks() const { return static_cast<int>(strides.size()) - 1; }

  // Channel width after upsampling block k (k = 0 is the fused tensor).
  int block_width(int k) const {
    if (k == 0) return c1;
    double w = static_cast<double>(c1) / std::pow(channel_reduction, k);
    return std::max(ch_min, static_cast<int>(std::llround(w)));
  }

  // Kernel size grows 1 -> 3 -> 5 along the decoder: the alignment convs use
  // 1, the first upsampling block 3, and the rest 5.
  int block_kernel(int k) const { return std::min(1 + 2 * k, 5); }

  void validate() const {
    if (c1 < 1) throw InvalidSpec("decoder: c1 must be positive");
    if (ch_min < 1) throw InvalidSpec("decoder: ch_min must be positive");
    if (channel_reduction <= 1.0) throw InvalidSpec("decoder: channel_reduction must exceed 1");
    if (head_kernel < 1 || head_kernel % 2 == 0)
      throw InvalidSpec("decoder: head_kernel must be odd and positive");
    if (strides.empty()) throw InvalidSpec("decoder: strides must be non-empty");
    for (int s : strides)
      if (s < 1) throw InvalidSpec("decoder: strides must be positive");
    static_shape.validate("decoder static code");
    dynamic_shape.validate("decoder dynamic code");
    if (static_shape.h * strides[0] != dynamic_shape.h ||
        static_shape.w * strides[0] != dynamic_shape.w)
      throw InvalidSpec("decoder: static code * strides[0] must equal dynamic code resolution");
    int64_t h = dynamic_shape.h, w = dynamic_shape.w;
    for (size_t i = 1; i < strides.size(); ++i) {
      h *= strides[i];
      w *= strides[i];
    }
    if (h != out_h || w != out_w)
      throw InvalidSpec("decoder: dynamic resolution * strides[1:] must equal output resolution");
  }
};

// Concrete conv geometry derived from a FusionDecoderSpec.
struct DecoderLayout {
  struct Conv {
    int cin = 0;
    int cout = 0;  // conv output channels (pre-shuffle)
    int kernel = 1;
    int upscale = 1;
  };
  Conv align_static, align_dynamic, qkv, head;
  std::vector<Conv> blocks;
};

inline DecoderLayout decoder_layout(const FusionDecoderSpec& spec) {
  spec.validate();
  DecoderLayout lay;
  const int s0 = spec.strides[0];
  lay.align_static = {spec.static_shape.dim, spec.c1 * s0 * s0, 1, s0};
  lay.align_dynamic = {spec.dynamic_shape.dim, spec.c1, 1, 1};
  lay.qkv = {spec.c1, spec.c1, 1, 1};
  for (int k = 1; k <= spec.upsample_blocks(); ++k) {
    const int s = spec.strides[static_cast<size_t>(k)];
    lay.blocks.push_back({spec.block_width(k - 1), spec.block_width(k) * s * s,
                          spec.block_kernel(k), s});
  }
  lay.head = {spec.block_width(spec.upsample_blocks()), 3, spec.head_kernel, 1};
  return lay;
}

// ---------------------------------------------------------------------------
// Model: all learnable tensors in one canonically ordered store.
// ---------------------------------------------------------------------------

enum class ParamKind { Code, Weight, Bias };

struct ParamInfo {
  std::string name;
  ParamKind kind = ParamKind::Weight;
  bool prunable = false;
};

template <typename Scalar>
struct Model {
  TimelineConfig timeline;
  FusionDecoderSpec spec;
  std::vector<Tensor<Scalar>> tensors;
  std::vector<ParamInfo> infos;
  std::vector<std::optional<QuantHint>> hints;  // set for dequantized models

  int count() const { return static_cast<int>(tensors.size()); }

  Tensor<Scalar>& tensor(int i) { return tensors[static_cast<size_t>(i)]; }
  const Tensor<Scalar>& tensor(int i) const { return tensors[static_cast<size_t>(i)]; }

  const ParamInfo& info(int i) const { return infos[static_cast<size_t>(i)]; }

  int find(const std::string& name) const {
    for (int i = 0; i < count(); ++i)
      if (infos[static_cast<size_t>(i)].name == name) return i;
    return -1;
  }

  // Fixed tensor indices.
  static constexpr int kStatic = 0;
  static constexpr int kDynamic = 1;
  int idx_align_static_w() const { return 2; }
  int idx_align_dynamic_w() const { return 4; }
  int idx_q_w() const { return 6; }
  int idx_k_w() const { return 8; }
  int idx_v_w() const { return 10; }
  int idx_block_w(int b) const { return 12 + 2 * b; }
  int idx_head_w() const { return 12 + 2 * spec.upsample_blocks(); }
};

namespace detail {

template <typename Scalar>
void add_param(Model<Scalar>& m, const std::string& name, std::vector<int> shape, ParamKind kind,
               bool prunable) {
  m.tensors.emplace_back(std::move(shape));
  m.infos.push_back({name, kind, prunable});
  m.hints.emplace_back(std::nullopt);
}

template <typename Scalar>
void add_conv(Model<Scalar>& m, const std::string& name, const DecoderLayout::Conv& c) {
  add_param(m, name + ".weight", {c.cout, c.cin, c.kernel, c.kernel}, ParamKind::Weight, true);
  add_param(m, name + ".bias", {c.cout}, ParamKind::Bias, false);
}

template <typename Scalar>
void init_conv(Rng& rng, Tensor<Scalar>& w, Tensor<Scalar>& b) {
  const double fan_in = static_cast<double>(w.dim(1)) * w.dim(2) * w.dim(3);
  const double bound = 1.0 / std::sqrt(fan_in);
  for (auto& v : w.data) v = static_cast<Scalar>((rng.uniform() * 2.0 - 1.0) * bound);
  for (auto& v : b.data) v = static_cast<Scalar>((rng.uniform() * 2.0 - 1.0) * bound);
}

}  // namespace detail

// Allocates every tensor zero-filled, in canonical order.
template <typename Scalar>
Model<Scalar> model_skeleton(const TimelineConfig& tl, const FusionDecoderSpec& spec) {
  tl.validate();
  spec.validate();
  const DecoderLayout lay = decoder_layout(spec);
  Model<Scalar> m;
  m.timeline = tl;
  m.spec = spec;
  detail::add_param(m, "codes.static",
                    {tl.static_count, spec.static_shape.dim, spec.static_shape.h,
                     spec.static_shape.w},
                    ParamKind::Code, false);
  detail::add_param(m, "codes.dynamic",
                    {tl.dynamic_count, spec.dynamic_shape.dim, spec.dynamic_shape.h,
                     spec.dynamic_shape.w},
                    ParamKind::Code, false);
  detail::add_conv(m, "align_static", lay.align_static);
  detail::add_conv(m, "align_dynamic", lay.align_dynamic);
  detail::add_conv(m, "cca_q", lay.qkv);
  detail::add_conv(m, "cca_k", lay.qkv);
  detail::add_conv(m, "cca_v", lay.qkv);
  for (size_t b = 0; b < lay.blocks.size(); ++b)
    detail::add_conv(m, "block" + std::to_string(b + 1), lay.blocks[b]);
  detail::add_conv(m, "head", lay.head);
  return m;
}

// Seeds a model. The code grids match init_codes(seed); decoder convs use
// uniform(+-1/sqrt(fan_in)) and the head bias starts at 0.5 so the clamp
// begins in its linear region.
template <typename Scalar>
Model<Scalar> build_model(const TimelineConfig& tl, const FusionDecoderSpec& spec, uint64_t seed) {
  Model<Scalar> m = model_skeleton<Scalar>(tl, spec);
  auto grids = init_codes<Scalar>(tl, spec.static_shape, spec.dynamic_shape, seed);
  m.tensor(Model<Scalar>::kStatic) = std::move(grids.first.grid);
  m.tensor(Model<Scalar>::kDynamic) = std::move(grids.second.grid);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  for (int i = 2; i + 1 < m.count(); i += 2)
    detail::init_conv(rng, m.tensor(i), m.tensor(i + 1));
  m.tensor(m.idx_head_w() + 1).fill(static_cast<Scalar>(0.5));
  return m;
}

template <typename Scalar>
int64_t param_count(const Model<Scalar>& m) {
  int64_t n = 0;
  for (const auto& t : m.tensors) n += t.numel();
  return n;
}

inline int64_t param_count(const TimelineConfig& tl, const FusionDecoderSpec& spec) {
  const DecoderLayout lay = decoder_layout(spec);
  auto conv = [](const DecoderLayout::Conv& c) {
    return static_cast<int64_t>(c.cout) * c.cin * c.kernel * c.kernel + c.cout;
  };
  int64_t n = static_cast<int64_t>(tl.static_count) * spec.static_shape.numel() +
              static_cast<int64_t>(tl.dynamic_count) * spec.dynamic_shape.numel();
  n += conv(lay.align_static) + conv(lay.align_dynamic) + 3 * conv(lay.qkv) + conv(lay.head);
  for (const auto& b : lay.blocks) n += conv(b);
  return n;
}

// ---------------------------------------------------------------------------
// Gradient storage, index-aligned with the model's tensors.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct GradStore {
  std::vector<Tensor<Scalar>> g;

  GradStore() = default;
  explicit GradStore(const Model<Scalar>& m) {
    g.reserve(m.tensors.size());
    for (const auto& t : m.tensors) g.push_back(Tensor<Scalar>::zeros_like(t));
  }

  void zero() {
    for (auto& t : g) t.zero();
  }

  void add(const GradStore& other) {
    for (size_t i = 0; i < g.size(); ++i)
      for (int64_t k = 0; k < g[i].numel(); ++k) g[i][k] += other.g[i][k];
  }

  bool all_finite() const {
    for (const auto& t : g)
      if (!t.all_finite()) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct BlockTrace {
  Tensor<Scalar> input;   // block input feature
  Tensor<Scalar> act_in;  // shuffled conv output (GELU input)
};

// conv (same padding) -> pixel shuffle -> GELU
template <typename Scalar>
Tensor<Scalar> nerv_block_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                                  const Tensor<Scalar>& b, int upscale,
                                  BlockTrace<Scalar>* trace = nullptr) {
  Tensor<Scalar> u = conv2d(x, w, b);
  Tensor<Scalar> s = pixel_shuffle(u, upscale);
  Tensor<Scalar> y = gelu(s);
  if (trace) {
    trace->input = x;
    trace->act_in = std::move(s);
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> nerv_block_backward(const BlockTrace<Scalar>& trace, const Tensor<Scalar>& w,
                                   int upscale, const Tensor<Scalar>& dy, Tensor<Scalar>& dw,
                                   Tensor<Scalar>& db, bool need_dx) {
  Tensor<Scalar> ds = gelu_backward(trace.act_in, dy);
  Tensor<Scalar> du = pixel_shuffle_backward(ds, upscale, w.dim(0), trace.input.dim(1),
                                             trace.input.dim(2));
  Tensor<Scalar> dx;
  if (need_dx) dx = Tensor<Scalar>::zeros_like(trace.input);
  conv2d_backward(trace.input, w, du, need_dx ? &dx : nullptr, dw, db);
  return dx;
}

template <typename Scalar>
struct CcaTrace {
  Tensor<Scalar> s_feat, d_feat;   // aligned inputs [c1, h, w]
  Tensor<Scalar> q, k, v;          // conv outputs [c1, h, w]
  Tensor<Scalar> attn;             // row-softmaxed scores [c1, c1]
};

// Cross-channel attention: rows are channels, the spatial extent is the
// feature axis. Output = softmax(Q K^T) V + static residual. No score
// scaling is applied.
template <typename Scalar>
Tensor<Scalar> cca_fuse(const Tensor<Scalar>& s_feat, const Tensor<Scalar>& d_feat,
                        const Tensor<Scalar>& qw, const Tensor<Scalar>& qb,
                        const Tensor<Scalar>& kw, const Tensor<Scalar>& kb,
                        const Tensor<Scalar>& vw, const Tensor<Scalar>& vb,
                        CcaTrace<Scalar>* trace = nullptr) {
  check_same_shape(s_feat, d_feat, "cca_fuse inputs");
  const int c1 = s_feat.dim(0);
  const int hw = s_feat.dim(1) * s_feat.dim(2);
  Tensor<Scalar> q = conv2d(s_feat, qw, qb);
  Tensor<Scalar> k = conv2d(d_feat, kw, kb);
  Tensor<Scalar> v = conv2d(d_feat, vw, vb);
  Tensor<Scalar> qf = q, kf = k, vf = v;
  qf.shape = {c1, hw};
  kf.shape = {c1, hw};
  vf.shape = {c1, hw};
  Tensor<Scalar> scores = matmul_bt(qf, kf);
  Tensor<Scalar> attn = softmax_rows(scores);
  Tensor<Scalar> out = matmul(attn, vf);
  out.shape = s_feat.shape;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s_feat[i];
  if (trace) {
    trace->s_feat = s_feat;
    trace->d_feat = d_feat;
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attn = std::move(attn);
  }
  return out;
}

template <typename Scalar>
void cca_fuse_backward(const CcaTrace<Scalar>& tr, const Tensor<Scalar>& qw,
                       const Tensor<Scalar>& kw, const Tensor<Scalar>& vw,
                       const Tensor<Scalar>& dout, Tensor<Scalar>& ds_feat,
                       Tensor<Scalar>& dd_feat, Tensor<Scalar>& dqw, Tensor<Scalar>& dqb,
                       Tensor<Scalar>& dkw, Tensor<Scalar>& dkb, Tensor<Scalar>& dvw,
                       Tensor<Scalar>& dvb) {
  const int c1 = tr.s_feat.dim(0);
  const int hw = tr.s_feat.dim(1) * tr.s_feat.dim(2);
  Tensor<Scalar> dflat = dout;
  dflat.shape = {c1, hw};
  Tensor<Scalar> qf = tr.q, kf = tr.k, vf = tr.v;
  qf.shape = {c1, hw};
  kf.shape = {c1, hw};
  vf.shape = {c1, hw};

  Tensor<Scalar> dattn = matmul_bt(dflat, vf);                     // [c1, c1]
  Tensor<Scalar> dv = matmul_at(tr.attn, dflat);                   // [c1, hw]
  Tensor<Scalar> dscores = softmax_rows_backward(tr.attn, dattn);  // [c1, c1]
  Tensor<Scalar> dq = matmul(dscores, kf);                         // [c1, hw]
  Tensor<Scalar> dk = matmul_at(dscores, qf);                      // [c1, hw]
  dq.shape = tr.s_feat.shape;
  dk.shape = tr.s_feat.shape;
  dv.shape = tr.s_feat.shape;

  // residual
  for (int64_t i = 0; i < dout.numel(); ++i) ds_feat[i] += dout[i];
  conv2d_backward(tr.s_feat, qw, dq, &ds_feat, dqw, dqb);
  conv2d_backward(tr.d_feat, kw, dk, &dd_feat, dkw, dkb);
  conv2d_backward(tr.d_feat, vw, dv, &dd_feat, dvw, dvb);
}

template <typename Scalar>
struct DecodeTrace {
  double t = 0;
  StaticSampleWeights sw;
  DynamicSampleWeights dw;
  Tensor<Scalar> static_code, dynamic_code;
  BlockTrace<Scalar> align_s, align_d;
  CcaTrace<Scalar> cca;
  std::vector<BlockTrace<Scalar>> blocks;
  Tensor<Scalar> head_in;
  Tensor<Scalar> head_pre;  // pre-clamp output
  Tensor<Scalar> frame;     // [3, out_h, out_w] in [0, 1]
};

template <typename Scalar>
Tensor<Scalar> decode_frame_traced(const Model<Scalar>& m, double t, DecodeTrace<Scalar>* tr) {
  if (tr) tr->t = t;
  StaticSampleWeights sw;
  DynamicSampleWeights dw;
  Tensor<Scalar> sc = sample_static_grid(m.tensor(Model<Scalar>::kStatic), m.timeline, t, &sw);
  Tensor<Scalar> dc = sample_dynamic_grid(m.tensor(Model<Scalar>::kDynamic), m.timeline, t, &dw);

  BlockTrace<Scalar> tr_as, tr_ad;
  Tensor<Scalar> s_feat = nerv_block_forward(sc, m.tensor(m.idx_align_static_w()),
                                             m.tensor(m.idx_align_static_w() + 1),
                                             m.spec.strides[0], tr ? &tr_as : nullptr);
  Tensor<Scalar> d_feat = nerv_block_forward(dc, m.tensor(m.idx_align_dynamic_w()),
                                             m.tensor(m.idx_align_dynamic_w() + 1), 1,
                                             tr ? &tr_ad : nullptr);

  CcaTrace<Scalar> tr_cca;
  Tensor<Scalar> x = cca_fuse(s_feat, d_feat, m.tensor(m.idx_q_w()), m.tensor(m.idx_q_w() + 1),
                              m.tensor(m.idx_k_w()), m.tensor(m.idx_k_w() + 1),
                              m.tensor(m.idx_v_w()), m.tensor(m.idx_v_w() + 1),
                              tr ? &tr_cca : nullptr);

  std::vector<BlockTrace<Scalar>> tr_blocks(tr ? static_cast<size_t>(m.spec.upsample_blocks())
                                               : 0);
  for (int b = 0; b < m.spec.upsample_blocks(); ++b) {
    x = nerv_block_forward(x, m.tensor(m.idx_block_w(b)), m.tensor(m.idx_block_w(b) + 1),
                           m.spec.strides[static_cast<size_t>(b + 1)],
                           tr ? &tr_blocks[static_cast<size_t>(b)] : nullptr);
  }

  Tensor<Scalar> pre = conv2d(x, m.tensor(m.idx_head_w()), m.tensor(m.idx_head_w() + 1));
  Tensor<Scalar> frame = clamp01(pre);
  if (tr) {
    tr->sw = sw;
    tr->dw = dw;
    tr->static_code = std::move(sc);
    tr->dynamic_code = std::move(dc);
    tr->align_s = std::move(tr_as);
    tr->align_d = std::move(tr_ad);
    tr->cca = std::move(tr_cca);
    tr->blocks = std::move(tr_blocks);
    tr->head_in = std::move(x);
    tr->head_pre = pre;
    tr->frame = frame;
  }
  return frame;
}

// Pure function of (parameters, t).
template <typename Scalar>
Tensor<Scalar> decode_frame(const Model<Scalar>& m, double t) {
  return decode_frame_traced<Scalar>(m, t, nullptr);
}

template <typename Scalar>
void decode_backward(const Model<Scalar>& m, const DecodeTrace<Scalar>& tr,
                     const Tensor<Scalar>& dframe, GradStore<Scalar>& gs) {
  Tensor<Scalar> dpre = clamp01_backward(tr.head_pre, dframe);
  Tensor<Scalar> dx = Tensor<Scalar>::zeros_like(tr.head_in);
  conv2d_backward(tr.head_in, m.tensor(m.idx_head_w()), dpre, &dx, gs.g[static_cast<size_t>(m.idx_head_w())],
                  gs.g[static_cast<size_t>(m.idx_head_w() + 1)]);

  for (int b = m.spec.upsample_blocks() - 1; b >= 0; --b) {
    dx = nerv_block_backward(tr.blocks[static_cast<size_t>(b)], m.tensor(m.idx_block_w(b)),
                             m.spec.strides[static_cast<size_t>(b + 1)], dx,
                             gs.g[static_cast<size_t>(m.idx_block_w(b))],
                             gs.g[static_cast<size_t>(m.idx_block_w(b) + 1)], true);
  }

  Tensor<Scalar> ds_feat = Tensor<Scalar>::zeros_like(tr.cca.s_feat);
  Tensor<Scalar> dd_feat = Tensor<Scalar>::zeros_like(tr.cca.d_feat);
  cca_fuse_backward(tr.cca, m.tensor(m.idx_q_w()), m.tensor(m.idx_k_w()), m.tensor(m.idx_v_w()),
                    dx, ds_feat, dd_feat, gs.g[static_cast<size_t>(m.idx_q_w())],
                    gs.g[static_cast<size_t>(m.idx_q_w() + 1)], gs.g[static_cast<size_t>(m.idx_k_w())],
                    gs.g[static_cast<size_t>(m.idx_k_w() + 1)], gs.g[static_cast<size_t>(m.idx_v_w())],
                    gs.g[static_cast<size_t>(m.idx_v_w() + 1)]);

  Tensor<Scalar> dsc = nerv_block_backward(tr.align_s, m.tensor(m.idx_align_static_w()),
                                           m.spec.strides[0], ds_feat,
                                           gs.g[static_cast<size_t>(m.idx_align_static_w())],
                                           gs.g[static_cast<size_t>(m.idx_align_static_w() + 1)], true);
  Tensor<Scalar> ddc = nerv_block_backward(tr.align_d, m.tensor(m.idx_align_dynamic_w()), 1,
                                           dd_feat,
                                           gs.g[static_cast<size_t>(m.idx_align_dynamic_w())],
                                           gs.g[static_cast<size_t>(m.idx_align_dynamic_w() + 1)], true);

  slice_blend_backward(gs.g[Model<Scalar>::kStatic], tr.sw.i, tr.sw.j, tr.sw.wi, tr.sw.wj,
                       tr.sw.exact, dsc);
  slice_blend_backward(gs.g[Model<Scalar>::kDynamic], tr.dw.i0, tr.dw.i1, tr.dw.w0, tr.dw.w1,
                       tr.dw.exact, ddc);
}

}  // namespace dsnerv
