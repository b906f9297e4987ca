#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include <dsnerv/decoder.hpp>

using namespace dsnerv;

namespace {

// Toy model small enough for finite differences: 6 frames, 8x16 output.
TimelineConfig toy_timeline() { return {6, 3, 4}; }

FusionDecoderSpec toy_spec() {
  FusionDecoderSpec s;
  s.c1 = 6;
  s.ch_min = 4;
  s.strides = {2, 2};
  s.static_shape = {2, 4, 8};   // h=2, w=4, dim=8
  s.dynamic_shape = {4, 8, 2};  // h=4, w=8, dim=2
  s.out_h = 8;
  s.out_w = 16;
  return s;
}

// Bunny budget configuration: 13 static codes 4x8x64, 66 dynamic codes
// 20x40x1, c1=36, ch_min=16, strides (5,2,2,2,2,2) -> 640x1280 frames.
TimelineConfig bunny_timeline() { return {132, 13, 66}; }

FusionDecoderSpec bunny_spec() {
  FusionDecoderSpec s;
  s.c1 = 36;
  s.ch_min = 16;
  s.strides = {5, 2, 2, 2, 2, 2};
  s.static_shape = {4, 8, 64};
  s.dynamic_shape = {20, 40, 1};
  s.out_h = 640;
  s.out_w = 1280;
  return s;
}

Tensor<double> random_tensor(std::vector<int> shape, uint64_t seed) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("pixel shuffle places channel groups in raster order") {
  Tensor<double> x({4, 1, 1});
  x[0] = 10;
  x[1] = 20;
  x[2] = 30;
  x[3] = 40;
  const Tensor<double> y = pixel_shuffle(x, 2);
  REQUIRE(y.shape == std::vector<int>{1, 2, 2});
  REQUIRE(y[0] == 10);
  REQUIRE(y[1] == 20);
  REQUIRE(y[2] == 30);
  REQUIRE(y[3] == 40);
}

TEST_CASE("upsampling block: zero parameters give an all-zero output") {
  const Tensor<double> x = random_tensor({3, 4, 5}, 1);
  Tensor<double> w({8, 3, 3, 3});  // 2 output channels, upscale 2
  Tensor<double> b({8});
  const Tensor<double> y = nerv_block_forward(x, w, b, 2);
  REQUIRE(y.shape == std::vector<int>{2, 8, 10});
  for (int64_t k = 0; k < y.numel(); ++k) REQUIRE(y[k] == 0.0);
}

TEST_CASE("upsampling block: identity convolution reduces to the activation") {
  const Tensor<double> x = random_tensor({3, 4, 4}, 2);
  Tensor<double> w({3, 3, 1, 1});
  Tensor<double> b({3});
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  const Tensor<double> y = nerv_block_forward(x, w, b, 1);
  const Tensor<double> g = gelu(x);
  REQUIRE(y.shape == x.shape);
  for (int64_t k = 0; k < y.numel(); ++k) REQUIRE(y[k] == Catch::Approx(g[k]).margin(1e-15));
}

TEST_CASE("alignment brings both code paths to the same resolution") {
  const FusionDecoderSpec spec = toy_spec();
  const DecoderLayout lay = decoder_layout(spec);
  REQUIRE(lay.align_static.cin == 8);
  REQUIRE(lay.align_static.cout == spec.c1 * 4);  // pre-shuffle, upscale 2
  REQUIRE(lay.align_static.kernel == 1);
  REQUIRE(lay.align_dynamic.cin == 2);
  REQUIRE(lay.align_dynamic.cout == spec.c1);
  REQUIRE(lay.qkv.cin == spec.c1);
  REQUIRE(lay.qkv.cout == spec.c1);
  REQUIRE(lay.qkv.kernel == 1);

  const Tensor<double> sc = random_tensor({8, 2, 4}, 3);
  const Tensor<double> dc = random_tensor({2, 4, 8}, 4);
  Tensor<double> sw({spec.c1 * 4, 8, 1, 1}), sb({spec.c1 * 4});
  Tensor<double> dw({spec.c1, 2, 1, 1}), db({spec.c1});
  const Tensor<double> s_feat = nerv_block_forward(sc, sw, sb, 2);
  const Tensor<double> d_feat = nerv_block_forward(dc, dw, db, 1);
  REQUIRE(s_feat.shape == std::vector<int>{spec.c1, 4, 8});
  REQUIRE(d_feat.shape == s_feat.shape);
}

TEST_CASE("decoder spec invariants are enforced at build") {
  FusionDecoderSpec s = toy_spec();
  s.dynamic_shape.h = 5;  // breaks static * strides[0] == dynamic
  REQUIRE_THROWS_AS(s.validate(), InvalidSpec);

  s = toy_spec();
  s.out_w = 20;  // breaks dynamic * strides[1:] == output
  REQUIRE_THROWS_AS(s.validate(), InvalidSpec);

  s = toy_spec();
  s.channel_reduction = 1.0;
  REQUIRE_THROWS_AS(s.validate(), InvalidSpec);

  REQUIRE_NOTHROW(toy_spec().validate());
  REQUIRE_NOTHROW(bunny_spec().validate());
}

TEST_CASE("channel schedule tapers geometrically down to the floor") {
  const FusionDecoderSpec s = bunny_spec();
  REQUIRE(s.block_width(0) == 36);
  REQUIRE(s.block_width(1) == 30);
  REQUIRE(s.block_width(2) == 25);
  REQUIRE(s.block_width(3) == 21);
  REQUIRE(s.block_width(4) == 17);
  REQUIRE(s.block_width(5) == 16);  // floored at ch_min
  REQUIRE(s.block_kernel(1) == 3);
  REQUIRE(s.block_kernel(2) == 5);
  REQUIRE(s.block_kernel(5) == 5);
}

TEST_CASE("parameter count hits the published budget") {
  const int64_t n = param_count(bunny_timeline(), bunny_spec());
  REQUIRE(n == 371759);  // frozen: closed-form sum over grids and convs
  REQUIRE(n >= 315000);  // within -10% of the 0.35M budget
  REQUIRE(n <= 385000);  // within +10%

  const Model<float> m = build_model<float>(bunny_timeline(), bunny_spec(), 1);
  REQUIRE(param_count(m) == n);
}

TEST_CASE("grid share of the parameter count is exact arithmetic") {
  const TimelineConfig tl = bunny_timeline();
  const FusionDecoderSpec spec = bunny_spec();
  const Model<float> m = build_model<float>(tl, spec, 1);
  const int64_t grids = m.tensor(0).numel() + m.tensor(1).numel();
  REQUIRE(grids == 13 * 2048 + 66 * 800);

  // Doubling dim_d doubles only the dynamic grid rows plus the projection.
  FusionDecoderSpec wide = spec;
  wide.dynamic_shape.dim = 2;
  const Model<float> m2 = build_model<float>(tl, wide, 1);
  REQUIRE(m2.tensor(1).numel() - m.tensor(1).numel() == 66 * 800);
}

TEST_CASE("attention weights: hand-evaluated two-channel example") {
  // c1=2, one spatial position, identity Q/K/V projections.
  Tensor<double> s_feat({2, 1, 1}), d_feat({2, 1, 1});
  s_feat[0] = 1.0;
  s_feat[1] = 0.0;
  d_feat[0] = 2.0;
  d_feat[1] = 4.0;
  Tensor<double> eye({2, 2, 1, 1}), zero_b({2});
  eye[0] = 1.0;
  eye[3] = 1.0;

  CcaTrace<double> tr;
  const Tensor<double> out =
      cca_fuse(s_feat, d_feat, eye, zero_b, eye, zero_b, eye, zero_b, &tr);

  // scores = [[2,4],[0,0]]
  const double e2 = std::exp(2.0), e4 = std::exp(4.0);
  REQUIRE(tr.attn[0] == Catch::Approx(e2 / (e2 + e4)).margin(1e-12));
  REQUIRE(tr.attn[1] == Catch::Approx(e4 / (e2 + e4)).margin(1e-12));
  REQUIRE(tr.attn[2] == 0.5);
  REQUIRE(tr.attn[3] == 0.5);

  const double row0 = (2.0 * e2 + 4.0 * e4) / (e2 + e4) + 1.0;
  REQUIRE(out[0] == Catch::Approx(row0).margin(1e-12));
  REQUIRE(out[1] == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("attention rows are normalized and zero V leaves the static path") {
  const int c1 = 5;
  const Tensor<double> s_feat = random_tensor({c1, 3, 4}, 10);
  const Tensor<double> d_feat = random_tensor({c1, 3, 4}, 11);
  const Tensor<double> qw = random_tensor({c1, c1, 1, 1}, 12);
  const Tensor<double> kw = random_tensor({c1, c1, 1, 1}, 13);
  const Tensor<double> qb = random_tensor({c1}, 14);
  const Tensor<double> kb = random_tensor({c1}, 15);
  Tensor<double> vw({c1, c1, 1, 1}), vb({c1});

  CcaTrace<double> tr;
  const Tensor<double> out = cca_fuse(s_feat, d_feat, qw, qb, kw, kb, vw, vb, &tr);
  for (int r = 0; r < c1; ++r) {
    double sum = 0.0;
    for (int c = 0; c < c1; ++c) sum += tr.attn[r * c1 + c];
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
  }
  // A * 0 + residual: bitwise identity.
  REQUIRE(std::memcmp(out.ptr(), s_feat.ptr(), sizeof(double) * (size_t)out.numel()) == 0);
}

TEST_CASE("channel attention is invariant to the spatial flattening order") {
  const int c1 = 4, h = 3, w = 5, hw = h * w;
  const Tensor<double> s_feat = random_tensor({c1, h, w}, 20);
  const Tensor<double> d_feat = random_tensor({c1, h, w}, 21);
  const Tensor<double> qw = random_tensor({c1, c1, 1, 1}, 22);
  const Tensor<double> kw = random_tensor({c1, c1, 1, 1}, 23);
  const Tensor<double> vw = random_tensor({c1, c1, 1, 1}, 24);
  const Tensor<double> qb = random_tensor({c1}, 25);
  const Tensor<double> kb = random_tensor({c1}, 26);
  const Tensor<double> vb = random_tensor({c1}, 27);

  // A fixed permutation applied to the spatial axis of every input.
  std::vector<int> perm(static_cast<size_t>(hw));
  for (int i = 0; i < hw; ++i) perm[static_cast<size_t>(i)] = (i * 7 + 3) % hw;
  auto permute = [&](const Tensor<double>& t) {
    Tensor<double> p(t.shape);
    for (int c = 0; c < c1; ++c)
      for (int i = 0; i < hw; ++i) p[c * hw + i] = t[c * hw + perm[static_cast<size_t>(i)]];
    return p;
  };

  CcaTrace<double> tr_a, tr_b;
  cca_fuse(s_feat, d_feat, qw, qb, kw, kb, vw, vb, &tr_a);
  cca_fuse(permute(s_feat), permute(d_feat), qw, qb, kw, kb, vw, vb, &tr_b);
  for (int64_t k = 0; k < tr_a.attn.numel(); ++k)
    REQUIRE(tr_a.attn[k] == Catch::Approx(tr_b.attn[k]).margin(1e-12));
}

TEST_CASE("decoded frames have the right shape, range, and are pure") {
  const Model<double> m = build_model<double>(toy_timeline(), toy_spec(), 7);
  const Tensor<double> f1 = decode_frame(m, 2.0);
  const Tensor<double> f2 = decode_frame(m, 2.0);
  REQUIRE(f1.shape == std::vector<int>{3, 8, 16});
  for (int64_t k = 0; k < f1.numel(); ++k) {
    REQUIRE(f1[k] >= 0.0);
    REQUIRE(f1[k] <= 1.0);
  }
  REQUIRE(std::memcmp(f1.ptr(), f2.ptr(), sizeof(double) * (size_t)f1.numel()) == 0);
  REQUIRE_THROWS_AS(decode_frame(m, -1.0), IndexOutOfRange);
  REQUIRE_THROWS_AS(decode_frame(m, 6.0), IndexOutOfRange);
}

TEST_CASE("fractional decode times are accepted for interpolation") {
  const Model<double> m = build_model<double>(toy_timeline(), toy_spec(), 9);
  const Tensor<double> f = decode_frame(m, 2.5);
  REQUIRE(f.shape == std::vector<int>{3, 8, 16});
  REQUIRE(f.all_finite());
}

TEST_CASE("analytic gradients match finite differences through the whole decoder") {
  Model<double> m = build_model<double>(toy_timeline(), toy_spec(), 31);
  const double t = 1.0;  // non-anchor static blend, non-exact dynamic blend

  // Probe loss: sum of c * frame for fixed random c.
  DecodeTrace<double> tr;
  const Tensor<double> frame = decode_frame_traced(m, t, &tr);
  Tensor<double> c(frame.shape);
  Rng rng(77);
  for (auto& v : c.data) v = rng.normal();
  auto probe = [&](const Model<double>& model) {
    const Tensor<double> f = decode_frame(model, t);
    double acc = 0.0;
    for (int64_t k = 0; k < f.numel(); ++k) acc += c[k] * f[k];
    return acc;
  };

  GradStore<double> gs(m);
  decode_backward(m, tr, c, gs);

  const double h = 1e-6;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < m.count(); ++i) {
    Tensor<double>& p = m.tensor(i);
    const int64_t stride = std::max<int64_t>(1, p.numel() / 40);
    for (int64_t k = 0; k < p.numel(); k += stride) {
      const double keep = p[k];
      p[k] = keep + h;
      const double up = probe(m);
      p[k] = keep - h;
      const double dn = probe(m);
      p[k] = keep;
      const double fd = (up - dn) / (2 * h);
      const double an = gs.g[static_cast<size_t>(i)][k];
      num += (an - fd) * (an - fd);
      den += fd * fd;
    }
  }
  REQUIRE(den > 0.0);
  REQUIRE(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("every parameter receives gradient somewhere on the timeline") {
  Model<double> m = build_model<double>(toy_timeline(), toy_spec(), 33);
  GradStore<double> gs(m);
  for (int t = 0; t < 6; ++t) {
    DecodeTrace<double> tr;
    const Tensor<double> frame = decode_frame_traced(m, static_cast<double>(t), &tr);
    Tensor<double> d(frame.shape);
    d.fill(1e-3);
    decode_backward(m, tr, d, gs);
  }
  for (int i = 0; i < m.count(); ++i) {
    double mag = 0.0;
    for (int64_t k = 0; k < gs.g[static_cast<size_t>(i)].numel(); ++k)
      mag += std::abs(gs.g[static_cast<size_t>(i)][k]);
    INFO("tensor " << m.info(i).name);
    REQUIRE(mag > 0.0);
  }
}
