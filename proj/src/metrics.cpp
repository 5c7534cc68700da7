// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

namespace stran::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> w(kWindow);
  double total = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[i] = std::exp(-x * x / (2 * kSigma * kSigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable "valid" Gaussian filter of one plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& k) {
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWindow; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

std::vector<double> plane(const Tensor& t, int n) {
  const Shape s = t.shape();
  std::vector<double> p(s.plane());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = t.at(n * s.plane() + i);
  return p;
}

double tap_distance(const Tensor& fa, const Tensor& fb) {
  check_same_shape("feature_distance", fa, fb);
  const Shape s = fa.shape();
  const std::size_t hw = s.plane();
  double total = 0;
  for (int n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      double na = 0, nb = 0;
      for (int c = 0; c < s.c; ++c) {
        const std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * hw + p;
        na += fa.at(i) * fa.at(i);
        nb += fb.at(i) * fb.at(i);
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      double d = 0;
      for (int c = 0; c < s.c; ++c) {
        const std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * hw + p;
        const double diff = fa.at(i) / na - fb.at(i) / nb;
        d += diff * diff;
      }
      total += d;
    }
  return total / static_cast<double>(hw * s.n);
}

void mean_std(const std::vector<FrameMetrics>& f, double FrameMetrics::*field,
              double& mean, double& sd) {
  mean = sd = 0;
  if (f.empty()) return;
  for (const auto& m : f) mean += m.*field;
  mean /= static_cast<double>(f.size());
  for (const auto& m : f) sd += (m.*field - mean) * (m.*field - mean);
  sd = std::sqrt(sd / static_cast<double>(f.size()));
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  check_same_shape("mse", a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  const double m = mse(a, b);
  if (m == 0) return kPsnrCap;
  return 10 * std::log10(peak * peak / m);
}

Tensor luma(const Tensor& rgb) {
  const Shape s = rgb.shape();
  if (s.c == 1) return rgb;
  if (s.c != 3) throw ShapeError("luma: expected 1 or 3 channels", s);
  Tensor y({s.n, 1, s.h, s.w}, DType::F64);
  const std::size_t hw = s.plane();
  for (int n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = static_cast<std::size_t>(n) * 3 * hw + p;
      y.set(n * hw + p, 0.299 * rgb.at(base) + 0.587 * rgb.at(base + hw) +
                            0.114 * rgb.at(base + 2 * hw));
    }
  return y;
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
  check_same_shape("ssim", a, b);
  const Shape s = a.shape();
  if (s.h < kWindow || s.w < kWindow)
    throw ShapeError("ssim: image smaller than the 11x11 window", s);
  const Tensor ya = luma(a), yb = luma(b);
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const auto k = gaussian_taps();
  double total = 0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n) {
    const auto pa = plane(ya, n), pb = plane(yb, n);
    std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, s.h, s.w, k), mu_b = filter_valid(pb, s.h, s.w, k);
    const auto e_aa = filter_valid(aa, s.h, s.w, k), e_bb = filter_valid(bb, s.h, s.w, k);
    const auto e_ab = filter_valid(ab, s.h, s.w, k);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    count += mu_a.size();
  }
  return total / static_cast<double>(count);
}

double feature_distance(const Tensor& a, const Tensor& b, train::FeatureExtractor& ext) {
  check_same_shape("feature_distance", a, b);
  const auto dt = ext.params.list().front()->value.dtype();
  const auto fa = ext.features(a.to(dt));
  const auto fb = ext.features(b.to(dt));
  double total = 0;
  for (std::size_t i = 0; i < fa.size(); ++i) total += tap_distance(fa[i], fb[i]);
  return total / static_cast<double>(fa.size());
}

double feature_distance(const Tensor& a, const Tensor& b) {
  auto ext = train::FeatureExtractor::make(train::ExtractorRole::Perceptual, DType::F64);
  return feature_distance(a, b, ext);
}

FrameMetrics evaluate_frame(const Tensor& pred, const Tensor& gt,
                            train::FeatureExtractor& ext) {
  FrameMetrics m;
  m.psnr = psnr(pred, gt);
  m.ssim = ssim(pred, gt);
  m.feat_dist = feature_distance(pred, gt, ext);
  return m;
}

Aggregate aggregate(const std::vector<FrameMetrics>& frames) {
  Aggregate a;
  a.count = frames.size();
  mean_std(frames, &FrameMetrics::psnr, a.psnr_mean, a.psnr_std);
  mean_std(frames, &FrameMetrics::ssim, a.ssim_mean, a.ssim_std);
  mean_std(frames, &FrameMetrics::feat_dist, a.feat_mean, a.feat_std);
  return a;
}

std::string format_report(const std::vector<FrameMetrics>& frames) {
  std::string out =
      "# feat_dist is an LPIPS stand-in (fixed random conv features); its values "
      "are not comparable to LPIPS\n"
      "video_id,frame_idx,psnr,ssim,feat_dist\n";
  char buf[512];
  for (const auto& f : frames) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%.17g\n", f.video_id.c_str(),
                  f.frame_idx, f.psnr, f.ssim, f.feat_dist);
    out += buf;
  }
  const Aggregate a = aggregate(frames);
  std::snprintf(buf, sizeof buf, "mean+-std,%zu,%.17g+-%.17g,%.17g+-%.17g,%.17g+-%.17g\n",
                a.count, a.psnr_mean, a.psnr_std, a.ssim_mean, a.ssim_std, a.feat_mean,
                a.feat_std);
  out += buf;
  return out;
}

}  // namespace stran::metrics
