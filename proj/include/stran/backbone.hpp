// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// The generator: a temporal-window stem, residual blocks with texture
// injections at three scales, multi-tap fusion and a pixel-shuffle head.

#pragma once

#include <cstdint>
#include <vector>

#include "stran/autodiff.hpp"
#include "stran/texture_transformer.hpp"

namespace stran::backbone {

struct BackboneConfig {
  int radius = 2;          // window is 2*radius+1 frames
  int channels = 32;
  int blocks = 8;
  std::vector<int> inject{2, 4, 6};  // 1-based block after which scale i+1 is blended
  std::vector<int> taps{4, 6, 8};    // 1-based blocks whose outputs are fused
  int factor = 4;
  int head_channels = 16;
  tt::LTEConfig lte;
  tt::MatchConfig match;

  int frames() const { return 2 * radius + 1; }
  void validate() const;
};

struct Generator {
  BackboneConfig cfg;
  ag::ParamSet params;

  /// Fan-in uniform init from `seed`; second block convs and blend convs
  /// start at zero so every block and injection begins as the identity.
  static Generator init(const BackboneConfig& cfg, std::uint64_t seed,
                        DType dtype = DType::F32);
  std::size_t count_params() const { return params.scalar_count(); }
};

/// Closed-form parameter count for a configuration.
std::size_t expected_param_count(const BackboneConfig& cfg);

/// Frames t-radius..t+radius concatenated on channels; indices outside
/// [0, L) replicate the nearest frame.
Tensor assemble_window(const std::vector<Tensor>& frames, int t, int radius);

ag::Var stem(ag::Graph& g, Generator& gen, const ag::Var& window);
ag::Var residual_block(ag::Graph& g, ag::ParamSet& ps, int index, const ag::Var& x);

struct ForwardResult {
  ag::Var out;       // [n,3,factor*h,factor*w], unclamped
  tt::Textures tex;  // at padded resolution
  int pad_bottom = 0;
  int pad_right = 0;
};

/// `window` [n, frames*3, h, w], `ref` [n, 3, factor*h, factor*w]. Extents
/// that are not multiples of 4 are replicate-padded and the output cropped.
/// `reuse_matching` holds the texture matches of an earlier forward fixed.
ForwardResult generator_forward(ag::Graph& g, Generator& gen,
                                const Tensor& window, const Tensor& ref,
                                const tt::Textures* reuse_matching = nullptr);

/// Inference: no graph, output clamped to [0, 1].
Tensor enhance(Generator& gen, const Tensor& window, const Tensor& ref);

}  // namespace stran::backbone
