#pragma once

#include <cmath>

#include "dsnerv/common.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

// Dense primitives used by the decoder, with hand-written backward passes.
// Feature maps are [C, H, W]; conv weights are [Cout, Cin, K, K].

// -------------------------------- conv2d ----------------------------------
// Stride-1 convolution with zero "same" padding; K must be odd.

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || (k % 2) == 0)
    throw ShapeMismatch("conv2d: weight " + shape_to_string(w.shape) + " vs input " +
                        shape_to_string(x.shape));
  if (b.numel() != cout) throw ShapeMismatch("conv2d: bias size");
  const int pad = k / 2;
  Tensor<Scalar> y({cout, h, wd});
  for (int co = 0; co < cout; ++co) {
    Scalar* yc = y.ptr() + static_cast<int64_t>(co) * h * wd;
    const Scalar bias = b[co];
    for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) yc[i] = bias;
    for (int ci = 0; ci < cin; ++ci) {
      const Scalar* xc = x.ptr() + static_cast<int64_t>(ci) * h * wd;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - pad;
        const int oy0 = dy < 0 ? -dy : 0;
        const int oy1 = dy > 0 ? h - dy : h;
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - pad;
          const int ox0 = dx < 0 ? -dx : 0;
          const int ox1 = dx > 0 ? wd - dx : wd;
          const Scalar wv = w.at(co, ci, ky, kx);
          if (wv == Scalar(0)) continue;
          for (int oy = oy0; oy < oy1; ++oy) {
            const Scalar* xrow = xc + static_cast<int64_t>(oy + dy) * wd + dx;
            Scalar* yrow = yc + static_cast<int64_t>(oy) * wd;
            for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox];
          }
        }
      }
    }
  }
  return y;
}

// Accumulates into dx/dw/db; pass zeroed tensors for fresh gradients.
template <typename Scalar>
void conv2d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& dy,
                     Tensor<Scalar>* dx, Tensor<Scalar>& dw, Tensor<Scalar>& db) {
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  const int pad = k / 2;
  for (int co = 0; co < cout; ++co) {
    const Scalar* dyc = dy.ptr() + static_cast<int64_t>(co) * h * wd;
    Scalar acc = 0;
    for (int64_t i = 0; i < static_cast<int64_t>(h) * wd; ++i) acc += dyc[i];
    db[co] += acc;
    for (int ci = 0; ci < cin; ++ci) {
      const Scalar* xc = x.ptr() + static_cast<int64_t>(ci) * h * wd;
      Scalar* dxc = dx ? dx->ptr() + static_cast<int64_t>(ci) * h * wd : nullptr;
      for (int ky = 0; ky < k; ++ky) {
        const int dyy = ky - pad;
        const int oy0 = dyy < 0 ? -dyy : 0;
        const int oy1 = dyy > 0 ? h - dyy : h;
        for (int kx = 0; kx < k; ++kx) {
          const int dxx = kx - pad;
          const int ox0 = dxx < 0 ? -dxx : 0;
          const int ox1 = dxx > 0 ? wd - dxx : wd;
          Scalar wacc = 0;
          const Scalar wv = w.at(co, ci, ky, kx);
          for (int oy = oy0; oy < oy1; ++oy) {
            const Scalar* xrow = xc + static_cast<int64_t>(oy + dyy) * wd + dxx;
            const Scalar* dyrow = dyc + static_cast<int64_t>(oy) * wd;
            for (int ox = ox0; ox < ox1; ++ox) wacc += dyrow[ox] * xrow[ox];
          }
          dw.at(co, ci, ky, kx) += wacc;
          if (dxc && wv != Scalar(0)) {
            for (int oy = oy0; oy < oy1; ++oy) {
              Scalar* dxrow = dxc + static_cast<int64_t>(oy + dyy) * wd + dxx;
              const Scalar* dyrow = dyc + static_cast<int64_t>(oy) * wd;
              for (int ox = ox0; ox < ox1; ++ox) dxrow[ox] += wv * dyrow[ox];
            }
          }
        }
      }
    }
  }
}

// ------------------------------ pixel shuffle ------------------------------
// [C*s*s, H, W] -> [C, H*s, W*s]; the s*s values of one output cell are laid
// out in raster order over the input channel blocks.

template <typename Scalar>
Tensor<Scalar> pixel_shuffle(const Tensor<Scalar>& x, int s) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (s < 1 || c_in % (s * s) != 0) throw ShapeMismatch("pixel_shuffle: channels not divisible");
  if (s == 1) return x;
  const int c = c_in / (s * s);
  Tensor<Scalar> y({c, h * s, w * s});
  for (int cc = 0; cc < c; ++cc) {
    for (int dy = 0; dy < s; ++dy) {
      for (int dx = 0; dx < s; ++dx) {
        const Scalar* src = x.ptr() + (static_cast<int64_t>(cc) * s * s + dy * s + dx) * h * w;
        for (int yy = 0; yy < h; ++yy) {
          Scalar* dst = y.ptr() +
                        (static_cast<int64_t>(cc) * h * s + yy * s + dy) * (w * s) + dx;
          const Scalar* row = src + static_cast<int64_t>(yy) * w;
          for (int xx = 0; xx < w; ++xx) dst[static_cast<int64_t>(xx) * s] = row[xx];
        }
      }
    }
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> pixel_shuffle_backward(const Tensor<Scalar>& dy, int s, int c_in, int h, int w) {
  if (s == 1) return dy;
  const int c = c_in / (s * s);
  Tensor<Scalar> dx({c_in, h, w});
  for (int cc = 0; cc < c; ++cc) {
    for (int dyy = 0; dyy < s; ++dyy) {
      for (int dxx = 0; dxx < s; ++dxx) {
        Scalar* dst = dx.ptr() + (static_cast<int64_t>(cc) * s * s + dyy * s + dxx) * h * w;
        for (int yy = 0; yy < h; ++yy) {
          const Scalar* src = dy.ptr() +
                              (static_cast<int64_t>(cc) * h * s + yy * s + dyy) * (w * s) + dxx;
          Scalar* row = dst + static_cast<int64_t>(yy) * w;
          for (int xx = 0; xx < w; ++xx) row[xx] = src[static_cast<int64_t>(xx) * s];
        }
      }
    }
  }
  return dx;
}

// --------------------------------- GELU ------------------------------------
// Exact erf form; the derivative is Phi(x) + x * phi(x).

template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  const double xd = static_cast<double>(x);
  return static_cast<Scalar>(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865476)));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  const double xd = static_cast<double>(x);
  const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
  const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
  return static_cast<Scalar>(cdf + xd * pdf);
}

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = gelu_scalar(x[i]);
  return y;
}

template <typename Scalar>
Tensor<Scalar> gelu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) dx[i] = dy[i] * gelu_grad_scalar(x[i]);
  return dx;
}

// ------------------------------ softmax rows -------------------------------

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  const int r = x.dim(0), c = x.dim(1);
  Tensor<Scalar> y(x.shape);
  for (int i = 0; i < r; ++i) {
    const Scalar* xr = x.ptr() + static_cast<int64_t>(i) * c;
    Scalar* yr = y.ptr() + static_cast<int64_t>(i) * c;
    Scalar m = xr[0];
    for (int j = 1; j < c; ++j) m = std::max(m, xr[j]);
    Scalar sum = 0;
    for (int j = 0; j < c; ++j) {
      yr[j] = static_cast<Scalar>(std::exp(static_cast<double>(xr[j] - m)));
      sum += yr[j];
    }
    for (int j = 0; j < c; ++j) yr[j] /= sum;
  }
  return y;
}

// dx_r = (dy_r - <dy_r, y_r>) * y_r, rowwise.
template <typename Scalar>
Tensor<Scalar> softmax_rows_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& dy) {
  const int r = y.dim(0), c = y.dim(1);
  Tensor<Scalar> dx(y.shape);
  for (int i = 0; i < r; ++i) {
    const Scalar* yr = y.ptr() + static_cast<int64_t>(i) * c;
    const Scalar* dyr = dy.ptr() + static_cast<int64_t>(i) * c;
    Scalar* dxr = dx.ptr() + static_cast<int64_t>(i) * c;
    Scalar dot = 0;
    for (int j = 0; j < c; ++j) dot += dyr[j] * yr[j];
    for (int j = 0; j < c; ++j) dxr[j] = (dyr[j] - dot) * yr[j];
  }
  return dx;
}

// ------------------------------ small matmuls ------------------------------

// a [m,k] * b [k,n] -> [m,n]
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeMismatch("matmul inner dims");
  Tensor<Scalar> y({m, n});
  for (int i = 0; i < m; ++i) {
    const Scalar* ar = a.ptr() + static_cast<int64_t>(i) * k;
    Scalar* yr = y.ptr() + static_cast<int64_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const Scalar av = ar[kk];
      if (av == Scalar(0)) continue;
      const Scalar* br = b.ptr() + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) yr[j] += av * br[j];
    }
  }
  return y;
}

// a [m,k] * b^T where b is [n,k] -> [m,n]
template <typename Scalar>
Tensor<Scalar> matmul_bt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeMismatch("matmul_bt inner dims");
  Tensor<Scalar> y({m, n});
  for (int i = 0; i < m; ++i) {
    const Scalar* ar = a.ptr() + static_cast<int64_t>(i) * k;
    Scalar* yr = y.ptr() + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Scalar* br = b.ptr() + static_cast<int64_t>(j) * k;
      Scalar acc = 0;
      for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      yr[j] = acc;
    }
  }
  return y;
}

// a^T * b where a is [k,m], b is [k,n] -> [m,n]
template <typename Scalar>
Tensor<Scalar> matmul_at(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const int k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeMismatch("matmul_at inner dims");
  Tensor<Scalar> y({m, n});
  for (int kk = 0; kk < k; ++kk) {
    const Scalar* ar = a.ptr() + static_cast<int64_t>(kk) * m;
    const Scalar* br = b.ptr() + static_cast<int64_t>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const Scalar av = ar[i];
      if (av == Scalar(0)) continue;
      Scalar* yr = y.ptr() + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) yr[j] += av * br[j];
    }
  }
  return y;
}

// ------------------------------- clamp 0..1 --------------------------------

template <typename Scalar>
Tensor<Scalar> clamp01(const Tensor<Scalar>& x) {
  Tensor<Scalar> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i)
    y[i] = x[i] < Scalar(0) ? Scalar(0) : (x[i] > Scalar(1) ? Scalar(1) : x[i]);
  return y;
}

// Subgradient: passes where the input is inside [0, 1] (inclusive).
template <typename Scalar>
Tensor<Scalar> clamp01_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& dy) {
  Tensor<Scalar> dx(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i)
    dx[i] = (x[i] >= Scalar(0) && x[i] <= Scalar(1)) ? dy[i] : Scalar(0);
  return dx;
}

}  // namespace dsnerv
