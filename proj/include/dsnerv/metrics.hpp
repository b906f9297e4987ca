#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dsnerv/common.hpp"
#include "dsnerv/tensor.hpp"

namespace dsnerv {

// All metrics assume pixel values in [0, 1] and accumulate in double.

inline double psnr_from_mse(double mse) {
  if (mse < 1e-10) return 100.0;  // cap for (near-)identical frames
  return 10.0 * std::log10(1.0 / mse);
}

template <typename Scalar>
double frame_mse(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same_shape(a, b, "frame_mse");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

template <typename Scalar>
double frame_psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return psnr_from_mse(frame_mse(a, b));
}

inline double bits_per_pixel(int64_t bytes, int frames, int h, int w) {
  return static_cast<double>(bytes) * 8.0 /
         (static_cast<double>(frames) * static_cast<double>(h) * static_cast<double>(w));
}

// ---------------------------------------------------------------------------
// MS-SSIM with an 11x11 Gaussian window (sigma 1.5), valid correlation,
// computed per channel and averaged. Scales are 2x average-pool reductions;
// the luminance term enters only at the coarsest scale.
// ---------------------------------------------------------------------------

namespace detail {

constexpr int kSsimWindow = 11;

inline const std::vector<double>& ssim_window_1d() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kSsimWindow);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double x = i - (kSsimWindow - 1) / 2.0;
      w[static_cast<size_t>(i)] = std::exp(-(x * x) / (2.0 * sigma * sigma));
      sum += w[static_cast<size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return win;
}

// Separable valid correlation with the 1d window: [h, w] -> [h-10, w-10].
inline std::vector<double> gaussian_valid(const std::vector<double>& img, int h, int w) {
  const auto& win = ssim_window_1d();
  const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        acc += win[static_cast<size_t>(k)] * img[static_cast<size_t>(y) * w + x + k];
      rows[static_cast<size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        acc += win[static_cast<size_t>(k)] * rows[static_cast<size_t>(y + k) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = acc;
    }
  return out;
}

// Mean SSIM and mean contrast-structure term over one channel pair.
struct SsimTerms {
  double ssim = 0.0;
  double cs = 0.0;
};

inline SsimTerms ssim_channel(const std::vector<double>& a, const std::vector<double>& b, int h,
                              int w) {
  const double c1 = 1e-4, c2 = 9e-4;  // (0.01)^2 and (0.03)^2 for unit range
  const size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const std::vector<double> mu_a = gaussian_valid(a, h, w);
  const std::vector<double> mu_b = gaussian_valid(b, h, w);
  const std::vector<double> m_aa = gaussian_valid(aa, h, w);
  const std::vector<double> m_bb = gaussian_valid(bb, h, w);
  const std::vector<double> m_ab = gaussian_valid(ab, h, w);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double l_num = 2.0 * mu_a[i] * mu_b[i] + c1;
    const double l_den = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1;
    const double cs_num = 2.0 * cov + c2;
    const double cs_den = va + vb + c2;
    ssim_sum += (l_num * cs_num) / (l_den * cs_den);
    cs_sum += cs_num / cs_den;
  }
  const double count = static_cast<double>(mu_a.size());
  return {ssim_sum / count, cs_sum / count};
}

inline std::vector<double> avg_pool2(const std::vector<double>& img, int h, int w, int& oh,
                                     int& ow) {
  oh = h / 2;
  ow = w / 2;
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const size_t p = static_cast<size_t>(2 * y) * w + 2 * x;
      out[static_cast<size_t>(y) * ow + x] =
          (img[p] + img[p + 1] + img[p + w] + img[p + w + 1]) * 0.25;
    }
  return out;
}

}  // namespace detail

// Number of usable scales for a given resolution (at most 5).
inline int ms_ssim_scales(int h, int w) {
  const int m = std::min(h, w);
  if (m < detail::kSsimWindow)
    throw TooSmall("ms_ssim needs at least an 11x11 frame, got " + std::to_string(h) + "x" +
                   std::to_string(w));
  const int by_size = 1 + static_cast<int>(std::floor(std::log2(static_cast<double>(m) /
                                                                detail::kSsimWindow)));
  return std::min(5, by_size);
}

template <typename Scalar>
double ms_ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same_shape(a, b, "ms_ssim");
  if (a.rank() != 3) throw ShapeMismatch("ms_ssim expects [channels, h, w] frames");
  const int channels = a.dim(0);
  const int h0 = a.dim(1), w0 = a.dim(2);
  const int levels = ms_ssim_scales(h0, w0);

  static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double wsum = 0.0;
  for (int s = 0; s < levels; ++s) wsum += kWeights[s];
  std::vector<double> weights(static_cast<size_t>(levels));
  for (int s = 0; s < levels; ++s) weights[static_cast<size_t>(s)] = kWeights[s] / wsum;

  double total = 0.0;
  for (int c = 0; c < channels; ++c) {
    const size_t plane = static_cast<size_t>(h0) * w0;
    std::vector<double> xa(plane), xb(plane);
    for (size_t i = 0; i < plane; ++i) {
      xa[i] = static_cast<double>(a[static_cast<int64_t>(c * plane + i)]);
      xb[i] = static_cast<double>(b[static_cast<int64_t>(c * plane + i)]);
    }
    int h = h0, w = w0;
    double score = 1.0;
    for (int s = 0; s < levels; ++s) {
      const detail::SsimTerms terms = detail::ssim_channel(xa, xb, h, w);
      const double v = (s + 1 == levels) ? terms.ssim : terms.cs;
      score *= std::pow(std::max(v, 0.0), weights[static_cast<size_t>(s)]);
      if (s + 1 < levels) {
        int nh = 0, nw = 0;
        xa = detail::avg_pool2(xa, h, w, nh, nw);
        xb = detail::avg_pool2(xb, h, w, nh, nw);
        h = nh;
        w = nw;
      }
    }
    total += score;
  }
  return total / channels;
}

// ---------------------------------------------------------------------------
// Per-frame quality report.
// ---------------------------------------------------------------------------

struct QualityReport {
  std::vector<double> psnr;
  std::vector<double> msssim;

  double mean_psnr() const {
    double s = 0.0;
    for (double v : psnr) s += v;
    return psnr.empty() ? 0.0 : s / static_cast<double>(psnr.size());
  }

  double mean_msssim() const {
    double s = 0.0;
    for (double v : msssim) s += v;
    return msssim.empty() ? 0.0 : s / static_cast<double>(msssim.size());
  }

  // frame_ids relabels rows (e.g. held-out frame numbers); default 0..n-1.
  std::string to_csv(const std::vector<int>* frame_ids = nullptr) const {
    std::ostringstream os;
    os << "frame,psnr,ms_ssim\n" << std::fixed << std::setprecision(6);
    for (size_t i = 0; i < psnr.size(); ++i) {
      const size_t id = frame_ids ? static_cast<size_t>((*frame_ids)[i]) : i;
      os << id << ',' << psnr[i] << ',' << msssim[i] << '\n';
    }
    os << "mean," << mean_psnr() << ',' << mean_msssim() << '\n';
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "frames " << psnr.size() << ", mean PSNR "
       << mean_psnr() << " dB, mean MS-SSIM " << std::setprecision(6) << mean_msssim();
    return os.str();
  }
};

template <typename Scalar>
QualityReport quality_report(const std::vector<Tensor<Scalar>>& a,
                             const std::vector<Tensor<Scalar>>& b) {
  if (a.size() != b.size())
    throw ShapeMismatch("quality_report: sequences have " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()) + " frames");
  QualityReport r;
  r.psnr.reserve(a.size());
  r.msssim.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    r.psnr.push_back(frame_psnr(a[i], b[i]));
    r.msssim.push_back(ms_ssim(a[i], b[i]));
  }
  return r;
}

}  // namespace dsnerv
