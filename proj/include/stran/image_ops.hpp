// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Image-space primitives: separable resampling, sub-pixel rearrangement,
// patch extraction/folding and the block-transform degradation used to
// build paired training data.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stran/autodiff.hpp"
#include "stran/tensor.hpp"

namespace stran::image {

enum class Kernel { Bicubic, Bilinear };

/// Keys cubic convolution kernel, a = -0.5.
double cubic_weight(double t);

/// Sparse 1-D resampling matrix. Row o holds taps [begin[o], begin[o+1]),
/// sorted by source index with clamped duplicates merged.
struct AxisMap {
  int in_size = 0;
  int out_size = 0;
  std::vector<int> begin;
  std::vector<int> index;
  std::vector<double> weight;

  static AxisMap build(int in_size, int out_size, Kernel kernel);
};

/// Separable resampling: columns first, then rows; edge samples clamp.
Tensor resize(const Tensor& img, int out_h, int out_w, Kernel kernel);
/// Transpose of resize for an input of extent in_h x in_w.
Tensor resize_adjoint(const Tensor& grad, int in_h, int in_w, Kernel kernel);
ag::Var resize(const ag::Var& img, int out_h, int out_w, Kernel kernel);

/// [n, c*r*r, h, w] -> [n, c, h*r, w*r]; out(c, y*r+i, x*r+j) = in(c*r*r + i*r + j, y, x).
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pixel_unshuffle(const Tensor& x, int r);
ag::Var pixel_shuffle(const ag::Var& x, int r);
ag::Var pixel_unshuffle(const ag::Var& x, int r);

/// Layout of d x d patches over a zero-padded feature map. Origins are in
/// padded coordinates and enumerate row-major.
struct PatchGrid {
  Shape source;
  int d = 1;
  int stride = 1;
  int pad = 0;
  int count_y = 0;
  int count_x = 0;

  static PatchGrid make(const Shape& source, int d, int stride, int pad = 0);
  int count() const { return count_y * count_x; }
  std::pair<int, int> origin(int index) const {
    return {(index / count_x) * stride, (index % count_x) * stride};
  }
  int padded_h() const { return source.h + 2 * pad; }
  int padded_w() const { return source.w + 2 * pad; }
  int patch_len() const { return source.c * d * d; }
};

struct Patches {
  Tensor values;  // [n, 1, count, c*d*d], channel-major within a patch
  PatchGrid grid;
};

Patches extract_patches(const Tensor& feat, int d, int stride, int pad = 0);
/// Inverse layout of extract_patches. Overlaps are averaged by coverage
/// count; uncovered pixels come out as zero.
Tensor fold_patches(const Tensor& patches, const PatchGrid& grid);

struct DegradeConfig {
  int factor = 4;
  int block = 8;
  double q = 0.0;  // quantization step; 0 is lossless
  std::uint64_t seed = 0;

  void validate() const;
  std::string canonical() const;  // "factor=4;block=8;q=...;seed=..."
  std::uint64_t hash() const;
};

/// Orthonormal 2-D DCT-II per block, uniform quantization round(c/q)*q,
/// inverse transform. Edges are replicate-padded to whole blocks. No clipping.
Tensor block_dct_quantize(const Tensor& img, int block, double q);
/// Bilinear downscale by cfg.factor, then block quantization (skipped when
/// q == 0) and clipping to [0, 1].
Tensor degrade(const Tensor& hr, const DegradeConfig& cfg);

}  // namespace stran::image
