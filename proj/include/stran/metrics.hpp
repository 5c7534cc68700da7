// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Image quality metrics. Images are [n,3,h,w] (or [n,1,h,w] for SSIM) with
// values in [0, peak]; multi-sample inputs report the mean over samples.

#pragma once

#include <string>
#include <vector>

#include "stran/tensor.hpp"
#include "stran/training.hpp"

namespace stran::metrics {

/// Reported when the images are identical.
inline constexpr double kPsnrCap = 99.0;

double mse(const Tensor& a, const Tensor& b);
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Rec.601 luma of an RGB image, [n,3,h,w] -> [n,1,h,w]; one-channel input
/// is returned unchanged.
Tensor luma(const Tensor& rgb);

/// Mean structural similarity on luma: 11x11 Gaussian window (sigma 1.5)
/// over every fully contained position, C1 = (0.01 peak)^2,
/// C2 = (0.03 peak)^2. Throws if either extent is below 11.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Feature-space distance standing in for LPIPS: at every tap, features are
/// unit-normalised across channels at each position, squared differences
/// are summed over channels and averaged over positions; taps are averaged.
double feature_distance(const Tensor& a, const Tensor& b, train::FeatureExtractor& ext);
/// Same with the default perceptual extractor.
double feature_distance(const Tensor& a, const Tensor& b);

struct FrameMetrics {
  std::string video_id;
  int frame_idx = 0;
  double psnr = 0;
  double ssim = 0;
  double feat_dist = 0;
};

FrameMetrics evaluate_frame(const Tensor& pred, const Tensor& gt,
                            train::FeatureExtractor& ext);

struct Aggregate {
  std::size_t count = 0;
  double psnr_mean = 0, psnr_std = 0;
  double ssim_mean = 0, ssim_std = 0;
  double feat_mean = 0, feat_std = 0;
};

/// Means and population standard deviations over frames.
Aggregate aggregate(const std::vector<FrameMetrics>& frames);

/// A comment line naming the stand-in, the column header, one line per frame
/// and a final "mean+-std" line.
std::string format_report(const std::vector<FrameMetrics>& frames);

}  // namespace stran::metrics
