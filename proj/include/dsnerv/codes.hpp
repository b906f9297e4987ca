#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "dsnerv/common.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

// ---------------------------------------------------------------------------
// Timeline: how many frames a video has and how many static / dynamic codes
// cover it. Static codes sit at sparse anchor frames; dynamic codes are a
// uniform resampling of the whole timeline.
// ---------------------------------------------------------------------------

struct TimelineConfig {
  int frame_count = 0;    // T
  int static_count = 0;   // number of static codes
  int dynamic_count = 0;  // number of dynamic codes

  // Ideal spacing between consecutive static anchors, floor(T / static_count).
  int static_interval() const { return frame_count / static_count; }

  void validate() const {
    if (frame_count < 2) throw InvalidSpec("timeline: frame_count must be >= 2");
    if (static_count < 2 || static_count > frame_count)
      throw InvalidSpec("timeline: static_count must be in [2, frame_count]");
    if (dynamic_count < 1 || dynamic_count > frame_count)
      throw InvalidSpec("timeline: dynamic_count must be in [1, frame_count]");
  }
};

// Anchor frame of static code i. Anchors are spaced static_interval()+1
// frames apart, clamped so the final code always sits on the last frame.
// Throws DegenerateTimeline when clamping makes two anchors coincide.
inline std::vector<int> static_anchor_positions(const TimelineConfig& tl) {
  tl.validate();
  const int last = tl.frame_count - 1;
  const int spacing = tl.static_interval() + 1;
  std::vector<int> pos(static_cast<size_t>(tl.static_count));
  for (int i = 0; i + 1 < tl.static_count; ++i) {
    pos[static_cast<size_t>(i)] = std::min(i * spacing, last);
  }
  pos[static_cast<size_t>(tl.static_count - 1)] = last;
  for (size_t i = 1; i < pos.size(); ++i) {
    if (pos[i] <= pos[i - 1])
      throw DegenerateTimeline("static anchors collide after clamping; reduce static_count");
  }
  return pos;
}

struct CodeShape {
  int h = 0;
  int w = 0;
  int dim = 0;

  int64_t numel() const { return static_cast<int64_t>(h) * w * dim; }

  void validate(const char* name) const {
    if (h < 1 || w < 1 || dim < 1)
      throw InvalidSpec(std::string(name) + ": code dimensions must be positive");
  }
};

// Code grids are stored channel-first: [count, dim, h, w]. One slice
// (dim * h * w values) is contiguous.
template <typename Scalar>
struct StaticCodes {
  TimelineConfig timeline;
  CodeShape shape;
  Tensor<Scalar> grid;
};

template <typename Scalar>
struct DynamicCodes {
  TimelineConfig timeline;
  CodeShape shape;
  Tensor<Scalar> grid;
};

// ---------------------------------------------------------------------------
// Sampling weights. t may be fractional (frame interpolation); distances are
// then real-valued with the same formulas.
// ---------------------------------------------------------------------------

struct StaticSampleWeights {
  int i = 0;       // left anchor index
  int j = 0;       // right anchor index
  double wi = 1.0;
  double wj = 0.0;
  bool exact = false;  // t hit an anchor; the sampled code is slice i verbatim
};

inline void check_time(const TimelineConfig& tl, double t) {
  if (!(t >= 0.0 && t <= static_cast<double>(tl.frame_count - 1)))
    throw IndexOutOfRange("t outside [0, frame_count - 1]");
}

// Weights of the two anchors bracketing t: each anchor's weight is the
// normalized distance to the *other* anchor, so nearer codes weigh more.
// wj is computed as 1 - wi so the pair always sums to one exactly.
inline StaticSampleWeights static_sample_weights(const TimelineConfig& tl, double t) {
  check_time(tl, t);
  const std::vector<int> pos = static_anchor_positions(tl);
  int i = 0;
  while (i + 2 < tl.static_count && static_cast<double>(pos[static_cast<size_t>(i + 1)]) <= t) ++i;
  StaticSampleWeights w;
  w.i = i;
  w.j = i + 1;
  const double dis_i = t - static_cast<double>(pos[static_cast<size_t>(w.i)]);
  const double dis_j = static_cast<double>(pos[static_cast<size_t>(w.j)]) - t;
  if (dis_i == 0.0) {
    w.wi = 1.0;
    w.wj = 0.0;
    w.exact = true;
  } else if (dis_j == 0.0) {
    w.i = w.j;
    w.wi = 1.0;
    w.wj = 0.0;
    w.exact = true;
  } else {
    w.wi = dis_j / (dis_i + dis_j);
    w.wj = 1.0 - w.wi;
  }
  return w;
}

struct DynamicSampleWeights {
  int i0 = 0;
  int i1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
  bool exact = false;  // t maps onto a grid slice exactly
};

// Endpoint-aligned linear resampling: frame t maps to grid coordinate
// t * (count - 1) / (T - 1), so the first and last codes pin the first and
// last frames.
inline DynamicSampleWeights dynamic_sample_weights(const TimelineConfig& tl, double t) {
  check_time(tl, t);
  DynamicSampleWeights w;
  if (tl.dynamic_count == 1) {
    w.exact = true;
    return w;
  }
  const double s = t * static_cast<double>(tl.dynamic_count - 1) /
                   static_cast<double>(tl.frame_count - 1);
  const double fl = std::floor(s);
  if (s == fl) {
    w.i0 = w.i1 = static_cast<int>(fl);
    w.exact = true;
    return w;
  }
  w.i0 = static_cast<int>(fl);
  w.i1 = w.i0 + 1;
  w.w1 = s - fl;
  w.w0 = 1.0 - w.w1;
  return w;
}

// ---------------------------------------------------------------------------
// Sampling ops over raw grids. Slices are blended elementwise; an exact hit
// returns the stored slice bit-for-bit.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> slice_blend(const Tensor<Scalar>& grid, int a, int b, double wa, double wb,
                           bool exact) {
  const int64_t n = grid.numel() / grid.dim(0);
  Tensor<Scalar> out({grid.dim(1), grid.dim(2), grid.dim(3)});
  const Scalar* pa = grid.ptr() + a * n;
  if (exact) {
    std::copy(pa, pa + n, out.ptr());
    return out;
  }
  const Scalar* pb = grid.ptr() + b * n;
  const Scalar sa = static_cast<Scalar>(wa);
  const Scalar sb = static_cast<Scalar>(wb);
  for (int64_t k = 0; k < n; ++k) out[k] = sa * pa[k] + sb * pb[k];
  return out;
}

// Scatter the gradient of a blended slice back into the grid.
template <typename Scalar>
void slice_blend_backward(Tensor<Scalar>& grid_grad, int a, int b, double wa, double wb,
                          bool exact, const Tensor<Scalar>& dout) {
  const int64_t n = grid_grad.numel() / grid_grad.dim(0);
  Scalar* pa = grid_grad.ptr() + a * n;
  if (exact) {
    for (int64_t k = 0; k < n; ++k) pa[k] += dout[k];
    return;
  }
  Scalar* pb = grid_grad.ptr() + b * n;
  const Scalar sa = static_cast<Scalar>(wa);
  const Scalar sb = static_cast<Scalar>(wb);
  for (int64_t k = 0; k < n; ++k) {
    pa[k] += sa * dout[k];
    pb[k] += sb * dout[k];
  }
}

template <typename Scalar>
Tensor<Scalar> sample_static_grid(const Tensor<Scalar>& grid, const TimelineConfig& tl, double t,
                                  StaticSampleWeights* weights_out = nullptr) {
  const StaticSampleWeights w = static_sample_weights(tl, t);
  if (weights_out) *weights_out = w;
  return slice_blend(grid, w.i, w.j, w.wi, w.wj, w.exact);
}

template <typename Scalar>
Tensor<Scalar> sample_dynamic_grid(const Tensor<Scalar>& grid, const TimelineConfig& tl, double t,
                                   DynamicSampleWeights* weights_out = nullptr) {
  const DynamicSampleWeights w = dynamic_sample_weights(tl, t);
  if (weights_out) *weights_out = w;
  return slice_blend(grid, w.i0, w.i1, w.w0, w.w1, w.exact);
}

template <typename Scalar>
Tensor<Scalar> sample_static(const StaticCodes<Scalar>& codes, double t) {
  return sample_static_grid(codes.grid, codes.timeline, t);
}

template <typename Scalar>
Tensor<Scalar> sample_dynamic(const DynamicCodes<Scalar>& codes, double t) {
  return sample_dynamic_grid(codes.grid, codes.timeline, t);
}

// Full timeline expansion of the dynamic grid: [T, dim, h, w]. Per-frame
// slices equal sample_dynamic at the same t.
template <typename Scalar>
Tensor<Scalar> interpolate_dynamic(const DynamicCodes<Scalar>& codes) {
  const TimelineConfig& tl = codes.timeline;
  tl.validate();
  const int64_t n = codes.grid.numel() / codes.grid.dim(0);
  Tensor<Scalar> out({tl.frame_count, codes.grid.dim(1), codes.grid.dim(2), codes.grid.dim(3)});
  for (int t = 0; t < tl.frame_count; ++t) {
    Tensor<Scalar> s = sample_dynamic_grid(codes.grid, tl, static_cast<double>(t));
    std::copy(s.ptr(), s.ptr() + n, out.ptr() + t * n);
  }
  return out;
}

// Both grids drawn i.i.d. normal(0, 0.02); the draw order is fixed (static
// grid first) so one seed pins both.
template <typename Scalar>
std::pair<StaticCodes<Scalar>, DynamicCodes<Scalar>> init_codes(const TimelineConfig& tl,
                                                                const CodeShape& static_shape,
                                                                const CodeShape& dynamic_shape,
                                                                uint64_t seed) {
  tl.validate();
  static_anchor_positions(tl);  // reject degenerate timelines up front
  static_shape.validate("static code");
  dynamic_shape.validate("dynamic code");
  StaticCodes<Scalar> s{tl, static_shape,
                        Tensor<Scalar>({tl.static_count, static_shape.dim, static_shape.h,
                                        static_shape.w})};
  DynamicCodes<Scalar> d{tl, dynamic_shape,
                         Tensor<Scalar>({tl.dynamic_count, dynamic_shape.dim, dynamic_shape.h,
                                         dynamic_shape.w})};
  Rng rng(seed);
  for (auto& v : s.grid.data) v = static_cast<Scalar>(rng.normal() * 0.02);
  for (auto& v : d.grid.data) v = static_cast<Scalar>(rng.normal() * 0.02);
  return {std::move(s), std::move(d)};
}

}  // namespace dsnerv
