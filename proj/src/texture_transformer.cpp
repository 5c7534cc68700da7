// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/texture_transformer.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "stran/layers.hpp"
#include "stran/parallel.hpp"

namespace stran::tt {

namespace {

constexpr int kStageStride[kScales] = {1, 2, 2};
constexpr int kMinCoarse = 4;
constexpr int kRowBlock = 256;

std::string stage_name(int s) { return "lte.stage" + std::to_string(s + 1); }

}  // namespace

void add_lte_params(ag::ParamSet& ps, const LTEConfig& cfg, std::mt19937_64& rng,
                    DType dtype) {
  int in = 3;
  for (int s = 0; s < kScales; ++s) {
    nn::add_conv(ps, stage_name(s), {in, cfg.widths[s], 3}, rng, dtype);
    in = cfg.widths[s];
  }
}

Shape lte_output_shape(const Shape& img, int stage, const LTEConfig& cfg) {
  Shape s = img;
  for (int i = 0; i <= stage; ++i) {
    s.h = (s.h - 1) / kStageStride[i] + 1;
    s.w = (s.w - 1) / kStageStride[i] + 1;
  }
  s.c = cfg.widths[stage];
  return s;
}

std::vector<ag::Var> lte_forward(ag::Graph& g, ag::ParamSet& ps,
                                 const ag::Var& img) {
  const Shape s = img.shape();
  if (s.c != 3) throw ShapeError("lte_forward: expected 3 channels", s);
  const int ch = (((s.h - 1) / 2) / 2) + 1;
  const int cw = (((s.w - 1) / 2) / 2) + 1;
  if (ch < kMinCoarse || cw < kMinCoarse)
    throw ShapeError("lte_forward: input smaller than 4x4 after final stride",
                     s);
  std::vector<ag::Var> out;
  ag::Var x = img;
  for (int i = 0; i < kScales; ++i) {
    x = ag::leaky_relu(nn::conv(g, ps, stage_name(i), x, kStageStride[i]),
                       nn::kSlope);
    out.push_back(x);
  }
  return out;
}

std::vector<Tensor> lte_forward(ag::ParamSet& ps, const Tensor& img) {
  ag::Graph g(false);
  std::vector<Tensor> out;
  for (const auto& v : lte_forward(g, ps, ag::Var(img))) out.push_back(v.value());
  return out;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
RowMat<T> normalized_rows(const T* data, int rows, int cols, double eps) {
  RowMat<T> m = Eigen::Map<const RowMat<T>>(data, rows, cols);
  for (int i = 0; i < rows; ++i) {
    const double norm = std::sqrt(static_cast<double>(m.row(i).squaredNorm()));
    m.row(i) /= static_cast<T>(std::max(norm, eps));
  }
  return m;
}

template <typename T>
void relevance_impl(const image::Patches& qp, const image::Patches& kp,
                    double eps, AttentionMaps& out, bool keep_r) {
  const int n = qp.grid.source.n;
  const int pq = qp.grid.count(), pk = kp.grid.count();
  const int len = qp.grid.patch_len();
  auto qd = qp.values.data<T>();
  auto kd = kp.values.data<T>();
  std::span<T> rd;
  if (keep_r) rd = out.R.data<T>();
  const int blocks = (pq + kRowBlock - 1) / kRowBlock;
  for (int b = 0; b < n; ++b) {
    const RowMat<T> qn = normalized_rows<T>(qd.data() + std::size_t(b) * pq * len, pq, len, eps);
    const RowMat<T> kn = normalized_rows<T>(kd.data() + std::size_t(b) * pk * len, pk, len, eps);
    parallel_for(blocks, [&](std::size_t blk) {
      const int r0 = static_cast<int>(blk) * kRowBlock;
      const int rows = std::min(kRowBlock, pq - r0);
      const RowMat<T> scores = qn.middleRows(r0, rows) * kn.transpose();
      for (int i = 0; i < rows; ++i) {
        const T* row = scores.data() + std::size_t(i) * pk;
        int best = 0;
        for (int j = 1; j < pk; ++j)
          if (row[j] > row[best]) best = j;
        const std::size_t qi = std::size_t(b) * pq + r0 + i;
        out.H[qi] = best;
        out.S[qi] = row[best];
        if (keep_r) std::copy(row, row + pk, rd.data() + qi * pk);
      }
    });
  }
}

}  // namespace

AttentionMaps compute_relevance(const Tensor& q_feat, const Tensor& k_feat,
                                const MatchConfig& cfg, bool keep_r) {
  const Shape qs = q_feat.shape(), ks = k_feat.shape();
  if (qs.c != ks.c)
    throw ShapeError("compute_relevance: channel mismatch", qs, ks);
  if (qs.n != ks.n)
    throw ShapeError("compute_relevance: batch mismatch", qs, ks);
  check_same_dtype("compute_relevance", q_feat, k_feat);
  if (cfg.d < 1) throw Error("compute_relevance: d must be >= 1");
  const auto qp = image::extract_patches(q_feat, cfg.d, cfg.stride, cfg.pad);
  const auto kp = image::extract_patches(k_feat, cfg.d, cfg.stride, cfg.pad);
  AttentionMaps m;
  m.q_grid = qp.grid;
  m.k_grid = kp.grid;
  const std::size_t rows = std::size_t(qs.n) * qp.grid.count();
  m.H.assign(rows, 0);
  m.S.assign(rows, 0.0);
  if (keep_r)
    m.R = Tensor({qs.n, 1, qp.grid.count(), kp.grid.count()}, q_feat.dtype());
  dispatch(q_feat.dtype(), [&]<typename T>() {
    relevance_impl<T>(qp, kp, cfg.eps, m, keep_r);
  });
  return m;
}

void hard_attention(AttentionMaps& maps) {
  if (!maps.R.defined()) throw Error("hard_attention: relevance matrix not kept");
  const Shape rs = maps.R.shape();
  dispatch(maps.R.dtype(), [&]<typename T>() {
    auto r = maps.R.data<T>();
    for (std::size_t i = 0; i < std::size_t(rs.n) * rs.h; ++i) {
      const T* row = r.data() + i * rs.w;
      int best = 0;
      for (int j = 1; j < rs.w; ++j)
        if (row[j] > row[best]) best = j;
      maps.H[i] = best;
      maps.S[i] = row[best];
    }
  });
}

Tensor soft_attention(const AttentionMaps& maps) {
  image::PatchGrid g = maps.q_grid;
  g.source.c = 1;
  const int dd = g.d * g.d;
  Tensor patches({g.source.n, 1, g.count(), dd}, DType::F64);
  auto p = patches.data<double>();
  for (std::size_t i = 0; i < maps.S.size(); ++i)
    std::fill_n(p.data() + i * dd, dd, maps.S[i]);
  return image::fold_patches(patches, g);
}

namespace {

// Value and output geometry for ratio r; both maps are implicitly padded by
// pad*r.
struct TransferGeometry {
  int r, d, pad;
  Shape v, out;
};

TransferGeometry transfer_geometry(const Shape& v, const AttentionMaps& m, int r) {
  if (r < 1) throw Error("transfer_textures: ratio must be >= 1");
  const Shape ks = m.k_grid.source, qs = m.q_grid.source;
  if (v.h != ks.h * r || v.w != ks.w * r || v.n != ks.n)
    throw ShapeError("transfer_textures: value map is not " + std::to_string(r) +
                         "x the key map",
                     v, ks);
  if (m.H.size() != std::size_t(qs.n) * m.q_grid.count())
    throw Error("transfer_textures: index count does not match the query grid");
  return {r, m.q_grid.d * r, m.q_grid.pad * r, v,
          Shape{v.n, v.c, qs.h * r, qs.w * r}};
}

std::vector<int> coverage(const TransferGeometry& tg, const AttentionMaps& m) {
  const int ph = tg.out.h + 2 * tg.pad, pw = tg.out.w + 2 * tg.pad;
  std::vector<int> cover(std::size_t(ph) * pw, 0);
  for (int i = 0; i < m.q_grid.count(); ++i) {
    const auto [oy, ox] = m.q_grid.origin(i);
    for (int y = 0; y < tg.d; ++y)
      for (int x = 0; x < tg.d; ++x) ++cover[(oy * tg.r + y) * pw + ox * tg.r + x];
  }
  return cover;
}

// Both directions walk the selected patches row by row. The forward pass
// accumulates value rows into a padded output canvas and divides by coverage;
// the adjoint pre-divides the incoming gradient and scatters it back.
template <typename T>
void transfer_plane(const T* from, T* to, const TransferGeometry& tg,
                    const AttentionMaps& m, const std::vector<int>& cover,
                    int sample, bool adjoint) {
  const int pw = tg.out.w + 2 * tg.pad;
  const int ph = tg.out.h + 2 * tg.pad;
  const int vh = tg.v.h, vw = tg.v.w;
  const int d = tg.d, r = tg.r, pad = tg.pad;
  std::vector<double> canvas(std::size_t(ph) * pw, 0.0);
  std::vector<double> vacc;
  if (adjoint) {
    vacc.assign(std::size_t(vh) * vw, 0.0);
    for (int y = 0; y < tg.out.h; ++y)
      for (int x = 0; x < tg.out.w; ++x) {
        const int k = (y + pad) * pw + x + pad;
        if (cover[k]) canvas[k] = from[y * tg.out.w + x] / double(cover[k]);
      }
  }
  const std::size_t base = std::size_t(sample) * m.q_grid.count();
  for (int i = 0; i < m.q_grid.count(); ++i) {
    const auto [qy, qx] = m.q_grid.origin(i);
    const auto [ky, kx] = m.k_grid.origin(m.H[base + i]);
    const int sx0 = kx * r - pad;
    const int x0 = std::max(0, -sx0), x1 = std::min(d, vw - sx0);
    if (x0 >= x1) continue;
    for (int y = 0; y < d; ++y) {
      const int sy = ky * r + y - pad;
      if (sy < 0 || sy >= vh) continue;
      double* dst_row = canvas.data() + std::size_t(qy * r + y) * pw + qx * r;
      if (!adjoint) {
        const T* src_row = from + std::size_t(sy) * vw + sx0;
        for (int x = x0; x < x1; ++x) dst_row[x] += src_row[x];
      } else {
        double* v_row = vacc.data() + std::size_t(sy) * vw + sx0;
        for (int x = x0; x < x1; ++x) v_row[x] += dst_row[x];
      }
    }
  }
  if (adjoint) {
    for (std::size_t k = 0; k < vacc.size(); ++k) to[k] = static_cast<T>(vacc[k]);
  } else {
    for (int y = 0; y < tg.out.h; ++y)
      for (int x = 0; x < tg.out.w; ++x) {
        const int k = (y + pad) * pw + x + pad;
        to[y * tg.out.w + x] = cover[k] ? static_cast<T>(canvas[k] / cover[k]) : T(0);
      }
  }
}

Tensor transfer_apply(const Tensor& x, const TransferGeometry& tg,
                      const AttentionMaps& m, const std::vector<int>& cover,
                      bool adjoint) {
  const Shape in = adjoint ? tg.out : tg.v;
  const Shape os = adjoint ? tg.v : tg.out;
  if (x.shape().n != in.n || x.shape().h != in.h || x.shape().w != in.w)
    throw ShapeError("transfer_textures: unexpected input extent", x.shape(), in);
  const int c = x.shape().c;
  Tensor out({os.n, c, os.h, os.w}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    parallel_for(std::size_t(os.n) * c, [&](std::size_t job) {
      transfer_plane<T>(src.data() + job * in.plane(), dst.data() + job * os.plane(),
                        tg, m, cover, static_cast<int>(job / c), adjoint);
    });
  });
  return out;
}

}  // namespace

Tensor transfer_textures(const Tensor& v, const AttentionMaps& maps, int r) {
  const TransferGeometry tg = transfer_geometry(v.shape(), maps, r);
  return transfer_apply(v, tg, maps, coverage(tg, maps), false);
}

ag::Var transfer_textures(const ag::Var& v, const AttentionMaps& maps, int r) {
  const TransferGeometry tg = transfer_geometry(v.shape(), maps, r);
  auto m = std::make_shared<const AttentionMaps>(AttentionMaps{
      Tensor(), maps.H, maps.S, maps.q_grid, maps.k_grid});
  auto cover = std::make_shared<const std::vector<int>>(coverage(tg, *m));
  return ag::linear_op(
      v, "transfer_textures",
      [tg, m, cover](const Tensor& t) {
        return transfer_apply(t, tg, *m, *cover, false);
      },
      [tg, m, cover](const Tensor& g) {
        return transfer_apply(g, tg, *m, *cover, true);
      });
}

void add_blend_params(ag::ParamSet& ps, const std::string& name, int f_ch,
                      int t_ch, DType dtype) {
  std::mt19937_64 unused;
  nn::add_conv(ps, name, {f_ch + t_ch, f_ch, 1, true, nn::Init::Zero}, unused,
               dtype);
}

ag::Var blend(ag::Graph& g, ag::ParamSet& ps, const std::string& name,
              const ag::Var& f, const ag::Var& t, const Tensor& s) {
  const Shape fs = f.shape();
  if (t.shape().n != fs.n || t.shape().h != fs.h || t.shape().w != fs.w)
    throw ShapeError("blend: texture extent differs from features", t.shape(), fs);
  if (s.shape() != Shape{fs.n, 1, fs.h, fs.w})
    throw ShapeError("blend: soft map extent differs from features", s.shape(), fs);
  ag::Var delta = nn::conv(g, ps, name, ag::concat_channels({f, t}));
  return ag::add(f, ag::mul_map(delta, s.to(f.dtype())));
}

int packed_channels(const LTEConfig& cfg, int scale, int factor) {
  return cfg.widths[scale] * factor * factor;
}

Textures prepare_textures(ag::Graph& g, ag::ParamSet& ps, const ag::Var& lr,
                          const ag::Var& ref, int factor,
                          const MatchConfig& cfg, const Textures* reuse) {
  const Shape ls = lr.shape(), rs = ref.shape();
  if (ls.h % 4 != 0 || ls.w % 4 != 0)
    throw ShapeError("prepare_textures: input extents must be multiples of 4", ls);
  if (rs.n != ls.n || rs.h != ls.h * factor || rs.w != ls.w * factor)
    throw ShapeError("prepare_textures: reference must be " +
                         std::to_string(factor) + "x the input",
                     rs, ls);
  const std::vector<ag::Var> v = lte_forward(g, ps, ref);
  Textures tex;
  if (reuse) {
    tex.maps = reuse->maps;
    tex.gate = reuse->gate;
  } else {
    const Tensor ref_down =
        image::resize(ref.value(), ls.h, ls.w, image::Kernel::Bicubic);
    const std::vector<Tensor> q = lte_forward(ps, lr.value());
    const Tensor k = lte_forward(ps, ref_down).back();
    tex.maps = compute_relevance(q.back(), k, cfg, false);
    const Tensor s_map = soft_attention(tex.maps);
    for (int s = 0; s < kScales; ++s) {
      const Shape qs = q[s].shape();
      tex.gate[s] = image::resize(s_map, qs.h, qs.w, image::Kernel::Bicubic)
                        .to(lr.dtype());
    }
  }
  const Shape kc = tex.maps.k_grid.source;
  for (int s = 0; s < kScales; ++s) {
    const int r = v[s].shape().h / kc.h;
    tex.raw[s] = transfer_textures(v[s], tex.maps, r);
    tex.packed[s] = image::pixel_unshuffle(tex.raw[s], factor);
  }
  return tex;
}

std::vector<ag::Var> mstt_forward(ag::Graph& g, ag::ParamSet& ps,
                                  const Textures& tex,
                                  const std::vector<ag::Var>& feats,
                                  const std::string& prefix) {
  if (feats.size() != kScales)
    throw Error("mstt_forward: expected one feature map per scale");
  std::vector<ag::Var> out;
  for (int s = 0; s < kScales; ++s)
    out.push_back(blend(g, ps, prefix + std::to_string(s + 1), feats[s],
                        tex.packed[s], tex.gate[s]));
  return out;
}

}  // namespace stran::tt
