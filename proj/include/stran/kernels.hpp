// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Graph-free tensor kernels. The differentiable operators in autodiff.hpp
// are thin wrappers over these.

#pragma once

#include <vector>

#include "stran/tensor.hpp"

namespace stran::kernels {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
};

Shape conv2d_output_shape(const Shape& input, const Shape& weight,
                          ConvGeometry geo);

/// Cross-correlation with zero padding. `bias` may be undefined; otherwise it
/// holds one value per output channel.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              ConvGeometry geo);
/// Adjoint of conv2d with respect to its input.
Tensor conv2d_backward_data(const Tensor& grad_out, const Tensor& weight,
                            const Shape& input_shape, ConvGeometry geo);
/// Adjoint of conv2d with respect to its weight.
Tensor conv2d_backward_filter(const Tensor& input, const Tensor& grad_out,
                              const Shape& weight_shape, ConvGeometry geo);

/// Per-channel sum over n, h, w: [n,c,h,w] -> [1,c,1,1].
Tensor channel_sum(const Tensor& x);
/// [1,c,1,1] -> [n,c,h,w] by replication.
Tensor channel_broadcast(const Tensor& x, const Shape& shape);
/// [n,c,h,w] -> [n,1,1,1].
Tensor sample_sum(const Tensor& x);
/// [n,1,1,1] -> shape by replication.
Tensor sample_broadcast(const Tensor& x, const Shape& shape);
/// [n,1,h,w] multiplied into every channel of x.
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& map);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int begin, int count);
/// Window [top, top+h) x [left, left+w); samples outside x read as zero.
Tensor crop(const Tensor& x, int top, int left, int h, int w);
/// Adjoint of crop: places x into a zero tensor of `shape` at (top, left).
Tensor uncrop(const Tensor& x, const Shape& shape, int top, int left);
/// Edge-replicating pad on the bottom and right.
Tensor pad_replicate(const Tensor& x, int bottom, int right);
/// Selects samples [begin, begin+count) along n.
Tensor slice_batch(const Tensor& x, int begin, int count);
Tensor concat_batch(const std::vector<Tensor>& parts);

Tensor clamp(const Tensor& x, double lo, double hi);

}  // namespace stran::kernels
