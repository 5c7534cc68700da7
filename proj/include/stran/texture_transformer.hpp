// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Reference texture transfer. A weight-shared extractor (LTE) maps the
// low-resolution frame, the downscaled reference and the full reference to
// query, key and value features. Query/key patches are matched once by
// cosine similarity at the coarsest scale; the winning indices select value
// patches at every scale, and the best score gates how strongly the
// transferred texture is blended into the generator features.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stran/autodiff.hpp"
#include "stran/image_ops.hpp"

namespace stran::tt {

inline constexpr int kScales = 3;

struct LTEConfig {
  std::array<int, kScales> widths{16, 32, 64};
};

/// Adds "lte.stage{1,2,3}.{weight,bias}" to ps.
void add_lte_params(ag::ParamSet& ps, const LTEConfig& cfg, std::mt19937_64& rng,
                    DType dtype);

/// Extent after the three stages (stride 1, 2, 2; padding 1).
Shape lte_output_shape(const Shape& img, int stage, const LTEConfig& cfg);

/// Per-stage features, finest first. Throws if the coarsest map would be
/// smaller than 4x4.
std::vector<ag::Var> lte_forward(ag::Graph& g, ag::ParamSet& ps,
                                 const ag::Var& img);
/// Graph-free evaluation of the same network.
std::vector<Tensor> lte_forward(ag::ParamSet& ps, const Tensor& img);

struct MatchConfig {
  int d = 3;
  int stride = 1;
  int pad = 1;
  double eps = 1e-8;
};

struct AttentionMaps {
  Tensor R;                   // [n,1,Pq,Pk]; undefined when not kept
  std::vector<std::int32_t> H;  // n*Pq best key index per query patch
  std::vector<double> S;        // n*Pq best score per query patch
  image::PatchGrid q_grid;
  image::PatchGrid k_grid;

  int batch() const { return q_grid.source.n; }
};

/// Cosine similarity of every query patch against every key patch. Rows
/// are computed in fixed blocks, so results do not depend on worker count.
/// With keep_r = false only H and S are produced (no Pq x Pk storage).
AttentionMaps compute_relevance(const Tensor& q_feat, const Tensor& k_feat,
                                const MatchConfig& cfg = {}, bool keep_r = true);

/// Recomputes H from R: argmax per row, smallest index on ties.
void hard_attention(AttentionMaps& maps);

/// S_i folded over the query grid into an [n,1,h,w] map (overlaps averaged).
Tensor soft_attention(const AttentionMaps& maps);

/// Folds value patches selected by H. With ratio r the value map is r times
/// the key map, patches are d*r wide at origins scaled by r, and the result
/// is r times the query map. Linear in v; indices carry no gradient.
Tensor transfer_textures(const Tensor& v, const AttentionMaps& maps, int r);
ag::Var transfer_textures(const ag::Var& v, const AttentionMaps& maps, int r);

/// Adds "<name>.weight/bias", a zero-initialised 1x1 conv (f_ch + t_ch -> f_ch).
void add_blend_params(ag::ParamSet& ps, const std::string& name, int f_ch,
                      int t_ch, DType dtype);

/// F + conv1x1(concat(F, T)) * S, with S broadcast over channels.
ag::Var blend(ag::Graph& g, ag::ParamSet& ps, const std::string& name,
              const ag::Var& f, const ag::Var& t, const Tensor& s);

struct Textures {
  AttentionMaps maps;
  std::array<ag::Var, kScales> raw;      // at value resolution
  std::array<ag::Var, kScales> packed;   // raw unshuffled to query resolution
  std::array<Tensor, kScales> gate;      // soft map resized to query resolution
};

/// Runs the extractor on the frame, the downscaled reference and the
/// reference, matches at the coarsest scale and transfers at every scale.
/// `ref` must be exactly `factor` times `lr` in both extents, and lr
/// extents must be multiples of 4. With `reuse`, its matches and gates are
/// taken as given and only the value path is recomputed.
Textures prepare_textures(ag::Graph& g, ag::ParamSet& ps, const ag::Var& lr,
                          const ag::Var& ref, int factor,
                          const MatchConfig& cfg = {},
                          const Textures* reuse = nullptr);

/// Texture channels after packing, per scale.
int packed_channels(const LTEConfig& cfg, int scale, int factor);

/// Blends each scale's features with its textures; `feats` finest first,
/// blend layers named "<prefix><scale>".
std::vector<ag::Var> mstt_forward(ag::Graph& g, ag::ParamSet& ps,
                                  const Textures& tex,
                                  const std::vector<ag::Var>& feats,
                                  const std::string& prefix = "blend");

}  // namespace stran::tt
