#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include <dsnerv/codes.hpp>

using namespace dsnerv;

namespace {

Tensor<double> random_grid(int count, const CodeShape& s, uint64_t seed) {
  Tensor<double> g({count, s.dim, s.h, s.w});
  Rng rng(seed);
  for (auto& v : g.data) v = rng.normal();
  return g;
}

}  // namespace

TEST_CASE("static anchors match hand-evaluated positions") {
  REQUIRE(static_anchor_positions({12, 4, 3}) == std::vector<int>{0, 4, 8, 11});
  REQUIRE(static_anchor_positions({2, 2, 1}) == std::vector<int>{0, 1});

  // 13 codes over 132 frames: spacing 11, last clamped to 131.
  std::vector<int> expect;
  for (int i = 0; i < 12; ++i) expect.push_back(11 * i);
  expect.push_back(131);
  REQUIRE(static_anchor_positions({132, 13, 12}) == expect);
}

TEST_CASE("anchors are strictly increasing and end on the last frame") {
  for (int T : {2, 5, 9, 31, 132}) {
    for (int ls = 2; ls <= std::min(T, 14); ++ls) {
      TimelineConfig tl{T, ls, 1};
      std::vector<int> pos;
      try {
        pos = static_anchor_positions(tl);
      } catch (const DegenerateTimeline&) {
        continue;  // clamping collision is a documented error, not a bug
      }
      REQUIRE(static_cast<int>(pos.size()) == ls);
      REQUIRE(pos.front() == 0);
      REQUIRE(pos.back() == T - 1);
      for (size_t k = 1; k < pos.size(); ++k) REQUIRE(pos[k] > pos[k - 1]);
    }
  }
}

TEST_CASE("anchor collision after clamping is rejected") {
  // T=4, l_s=4: spacing 2 puts code 2 on frame 3, colliding with the last.
  REQUIRE_THROWS_AS(static_anchor_positions({4, 4, 1}), DegenerateTimeline);
  REQUIRE_THROWS_AS(static_anchor_positions({5, 5, 1}), DegenerateTimeline);
}

TEST_CASE("timeline validation rejects bad configs") {
  REQUIRE_THROWS_AS(static_anchor_positions({1, 2, 1}), InvalidSpec);
  REQUIRE_THROWS_AS(static_anchor_positions({12, 1, 1}), InvalidSpec);
  REQUIRE_THROWS_AS(static_anchor_positions({12, 13, 1}), InvalidSpec);
  REQUIRE_THROWS_AS(static_anchor_positions({12, 4, 0}), InvalidSpec);
  REQUIRE_THROWS_AS(static_anchor_positions({12, 4, 13}), InvalidSpec);
}

TEST_CASE("static weights: distance to the other anchor, normalized") {
  const TimelineConfig tl{12, 4, 3};  // anchors [0, 4, 8, 11]

  StaticSampleWeights w = static_sample_weights(tl, 1.0);
  REQUIRE(w.i == 0);
  REQUIRE(w.j == 1);
  REQUIRE(w.wi == 0.75);  // dis_0 = 1, dis_1 = 3
  REQUIRE(w.wj == 0.25);
  REQUIRE_FALSE(w.exact);

  w = static_sample_weights(tl, 2.0);  // midway between 0 and 4
  REQUIRE(w.wi == 0.5);
  REQUIRE(w.wj == 0.5);

  for (int anchor : {0, 4, 8, 11}) {
    w = static_sample_weights(tl, static_cast<double>(anchor));
    REQUIRE(w.exact);
    REQUIRE(w.wi == 1.0);
    REQUIRE(w.wj == 0.0);
  }
}

TEST_CASE("static weights are a convex pair for every time, including fractional") {
  const TimelineConfig tl{31, 5, 4};
  const std::vector<int> pos = static_anchor_positions(tl);
  for (double t = 0.0; t <= 30.0; t += 0.25) {
    const StaticSampleWeights w = static_sample_weights(tl, t);
    REQUIRE(w.wi >= 0.0);
    REQUIRE(w.wj >= 0.0);
    REQUIRE(w.wi + w.wj == 1.0);
    if (!w.exact) {
      REQUIRE(pos[static_cast<size_t>(w.i)] <= t);
      REQUIRE(pos[static_cast<size_t>(w.j)] >= t);
    }
  }
}

TEST_CASE("time outside the video is rejected") {
  const TimelineConfig tl{12, 4, 3};
  REQUIRE_THROWS_AS(static_sample_weights(tl, -0.5), IndexOutOfRange);
  REQUIRE_THROWS_AS(static_sample_weights(tl, 11.5), IndexOutOfRange);
  REQUIRE_THROWS_AS(dynamic_sample_weights(tl, -1.0), IndexOutOfRange);
  REQUIRE_THROWS_AS(dynamic_sample_weights(tl, 12.0), IndexOutOfRange);
}

TEST_CASE("anchor hit returns the stored slice bit-for-bit") {
  const TimelineConfig tl{12, 4, 3};
  const CodeShape shape{2, 3, 5};
  const Tensor<double> grid = random_grid(4, shape, 99);
  const std::vector<int> pos = static_anchor_positions(tl);
  const int64_t n = shape.numel();
  for (size_t k = 0; k < pos.size(); ++k) {
    const Tensor<double> out = sample_static_grid(grid, tl, static_cast<double>(pos[k]));
    REQUIRE(std::memcmp(out.ptr(), grid.ptr() + static_cast<int64_t>(k) * n,
                        sizeof(double) * static_cast<size_t>(n)) == 0);
  }
}

TEST_CASE("static sampling is the straight-line blend between anchors") {
  const TimelineConfig tl{12, 4, 3};
  const CodeShape shape{2, 2, 3};
  const Tensor<double> grid = random_grid(4, shape, 5);
  const std::vector<int> pos = static_anchor_positions(tl);
  const int64_t n = shape.numel();
  for (int t = 0; t < 12; ++t) {
    size_t seg = 0;
    while (seg + 2 < pos.size() && pos[seg + 1] <= t) ++seg;
    const double span = pos[seg + 1] - pos[seg];
    const double u = (t - pos[seg]) / span;
    const Tensor<double> out = sample_static_grid(grid, tl, static_cast<double>(t));
    for (int64_t k = 0; k < n; ++k) {
      const double a = grid[static_cast<int64_t>(seg) * n + k];
      const double b = grid[(static_cast<int64_t>(seg) + 1) * n + k];
      REQUIRE(out[k] == Catch::Approx((1.0 - u) * a + u * b).margin(1e-12));
    }
  }
}

TEST_CASE("dynamic resampling: endpoint alignment and hand-checked midpoints") {
  // Three codes over five frames: A, (A+B)/2, B, (B+C)/2, C.
  const TimelineConfig tl{5, 2, 3};
  const CodeShape shape{1, 2, 2};
  DynamicCodes<double> codes{tl, shape, Tensor<double>({3, 2, 1, 2})};
  const double A = 1.0, B = 2.0, C = 5.0;
  for (int64_t k = 0; k < 4; ++k) {
    codes.grid[k] = A;
    codes.grid[4 + k] = B;
    codes.grid[8 + k] = C;
  }
  const Tensor<double> full = interpolate_dynamic(codes);
  REQUIRE(full.shape == std::vector<int>{5, 2, 1, 2});
  const double expect[5] = {A, (A + B) / 2, B, (B + C) / 2, C};
  for (int t = 0; t < 5; ++t)
    for (int64_t k = 0; k < 4; ++k) REQUIRE(full[t * 4 + k] == expect[t]);
}

TEST_CASE("dynamic grid with one code per frame resamples to itself") {
  const TimelineConfig tl{6, 2, 6};
  const CodeShape shape{2, 2, 3};
  DynamicCodes<double> codes{tl, shape, random_grid(6, shape, 17)};
  const Tensor<double> full = interpolate_dynamic(codes);
  REQUIRE(full.shape == codes.grid.shape);
  REQUIRE(std::memcmp(full.ptr(), codes.grid.ptr(),
                      sizeof(double) * static_cast<size_t>(full.numel())) == 0);
}

TEST_CASE("two dynamic codes over three frames: middle is the mean") {
  const TimelineConfig tl{3, 2, 2};
  const CodeShape shape{1, 1, 4};
  DynamicCodes<double> codes{tl, shape, random_grid(2, shape, 3)};
  const Tensor<double> mid = sample_dynamic(codes, 1.0);
  for (int64_t k = 0; k < 4; ++k)
    REQUIRE(mid[k] == Catch::Approx((codes.grid[k] + codes.grid[4 + k]) / 2).margin(1e-15));
}

TEST_CASE("per-frame dynamic sampling matches the full interpolation oracle") {
  const TimelineConfig tl{11, 2, 4};
  const CodeShape shape{2, 3, 2};
  DynamicCodes<double> codes{tl, shape, random_grid(4, shape, 23)};
  const int64_t n = shape.numel();
  for (int t = 0; t < tl.frame_count; ++t) {
    // Independent oracle: evaluate the endpoint-aligned source coordinate.
    const double s = t * static_cast<double>(tl.dynamic_count - 1) /
                     static_cast<double>(tl.frame_count - 1);
    const int i0 = static_cast<int>(std::floor(s));
    const double frac = s - i0;
    const Tensor<double> out = sample_dynamic(codes, static_cast<double>(t));
    for (int64_t k = 0; k < n; ++k) {
      const double a = codes.grid[i0 * n + k];
      const double b = frac == 0.0 ? a : codes.grid[(i0 + 1) * n + k];
      const double expect = (1.0 - frac) * a + frac * b;
      REQUIRE(out[k] == Catch::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("grid sampling gradients match central finite differences") {
  const TimelineConfig tl{7, 3, 4};
  const CodeShape sshape{2, 2, 3};
  const CodeShape dshape{1, 2, 2};
  Tensor<double> sgrid = random_grid(3, sshape, 41);
  Tensor<double> dgrid = random_grid(4, dshape, 42);
  Rng rng(43);

  // Scalar probe loss: sum of c_k * out_k with fixed random c.
  auto probe = [&](const Tensor<double>& out, const Tensor<double>& c) {
    double acc = 0.0;
    for (int64_t k = 0; k < out.numel(); ++k) acc += c[k] * out[k];
    return acc;
  };

  for (double t : {0.0, 1.5, 2.0, 5.25, 6.0}) {
    StaticSampleWeights sw;
    Tensor<double> out = sample_static_grid(sgrid, tl, t, &sw);
    Tensor<double> c(out.shape);
    for (auto& v : c.data) v = rng.normal();

    Tensor<double> grad(sgrid.shape);
    slice_blend_backward(grad, sw.i, sw.j, sw.wi, sw.wj, sw.exact, c);

    const double h = 1e-6;
    for (int64_t k = 0; k < sgrid.numel(); k += 7) {
      const double keep = sgrid[k];
      sgrid[k] = keep + h;
      const double up = probe(sample_static_grid(sgrid, tl, t), c);
      sgrid[k] = keep - h;
      const double dn = probe(sample_static_grid(sgrid, tl, t), c);
      sgrid[k] = keep;
      const double fd = (up - dn) / (2 * h);
      REQUIRE(grad[k] == Catch::Approx(fd).margin(1e-7));
    }

    DynamicSampleWeights dw;
    out = sample_dynamic_grid(dgrid, tl, t, &dw);
    Tensor<double> cd(out.shape);
    for (auto& v : cd.data) v = rng.normal();
    Tensor<double> dgrad(dgrid.shape);
    slice_blend_backward(dgrad, dw.i0, dw.i1, dw.w0, dw.w1, dw.exact, cd);
    for (int64_t k = 0; k < dgrid.numel(); k += 3) {
      const double keep = dgrid[k];
      dgrid[k] = keep + h;
      const double up = probe(sample_dynamic_grid(dgrid, tl, t), cd);
      dgrid[k] = keep - h;
      const double dn = probe(sample_dynamic_grid(dgrid, tl, t), cd);
      dgrid[k] = keep;
      const double fd = (up - dn) / (2 * h);
      REQUIRE(dgrad[k] == Catch::Approx(fd).margin(1e-7));
    }
  }
}

TEST_CASE("code initialization is seeded and statistically sane") {
  const TimelineConfig tl{40, 4, 8};
  const CodeShape sshape{10, 50, 10};  // 5000 entries per slice, 2e4 total
  const CodeShape dshape{10, 100, 10};
  auto [s1, d1] = init_codes<float>(tl, sshape, dshape, 7);
  auto [s2, d2] = init_codes<float>(tl, sshape, dshape, 7);
  auto [s3, d3] = init_codes<float>(tl, sshape, dshape, 8);

  REQUIRE(std::memcmp(s1.grid.ptr(), s2.grid.ptr(),
                      sizeof(float) * static_cast<size_t>(s1.grid.numel())) == 0);
  REQUIRE(std::memcmp(d1.grid.ptr(), d2.grid.ptr(),
                      sizeof(float) * static_cast<size_t>(d1.grid.numel())) == 0);
  REQUIRE(std::memcmp(s1.grid.ptr(), s3.grid.ptr(),
                      sizeof(float) * static_cast<size_t>(s1.grid.numel())) != 0);

  double mean = 0.0, sq = 0.0;
  const int64_t n = s1.grid.numel() + d1.grid.numel();
  for (const auto v : s1.grid.data) {
    mean += v;
    sq += static_cast<double>(v) * v;
  }
  for (const auto v : d1.grid.data) {
    mean += v;
    sq += static_cast<double>(v) * v;
  }
  mean /= static_cast<double>(n);
  const double std_dev = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  REQUIRE(std::abs(mean) < 3.0 * 0.02 / std::sqrt(static_cast<double>(n)));
  REQUIRE(std_dev == Catch::Approx(0.02).epsilon(0.05));
}
