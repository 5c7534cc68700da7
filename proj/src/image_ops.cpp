// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "stran/hash.hpp"
#include "stran/kernels.hpp"
#include "stran/parallel.hpp"

namespace stran::image {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

AxisMap AxisMap::build(int in_size, int out_size, Kernel kernel) {
  if (in_size < 1 || out_size < 1)
    throw Error("resize extents must be >= 1 (in " + std::to_string(in_size) +
                ", out " + std::to_string(out_size) + ")");
  AxisMap m;
  m.in_size = in_size;
  m.out_size = out_size;
  m.begin.reserve(out_size + 1);
  m.begin.push_back(0);
  const double ratio = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double x = (o + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(x));
    std::map<int, double> taps;  // ordered merge of clamped duplicates
    auto add = [&](int j, double w) {
      taps[std::clamp(j, 0, in_size - 1)] += w;
    };
    if (kernel == Kernel::Bilinear) {
      const double f = x - base;
      add(base, 1.0 - f);
      add(base + 1, f);
    } else {
      for (int j = base - 1; j <= base + 2; ++j) add(j, cubic_weight(x - j));
    }
    for (const auto& [j, w] : taps) {
      m.index.push_back(j);
      m.weight.push_back(w);
    }
    m.begin.push_back(static_cast<int>(m.index.size()));
  }
  return m;
}

namespace {

// Applies m along the last axis (horizontal) or the h axis, or its transpose.
template <typename T>
void apply_w(std::span<const T> in, std::span<T> out, int rows, const AxisMap& m,
             bool transpose) {
  const int iw = transpose ? m.out_size : m.in_size;
  const int ow = transpose ? m.in_size : m.out_size;
  parallel_for(rows, [&](std::size_t r) {
    const T* src = in.data() + r * iw;
    T* dst = out.data() + r * ow;
    if (!transpose) {
      for (int o = 0; o < m.out_size; ++o) {
        double acc = 0.0;
        for (int k = m.begin[o]; k < m.begin[o + 1]; ++k)
          acc += m.weight[k] * src[m.index[k]];
        dst[o] = static_cast<T>(acc);
      }
    } else {
      std::vector<double> acc(ow, 0.0);
      for (int o = 0; o < m.out_size; ++o)
        for (int k = m.begin[o]; k < m.begin[o + 1]; ++k)
          acc[m.index[k]] += m.weight[k] * src[o];
      for (int i = 0; i < ow; ++i) dst[i] = static_cast<T>(acc[i]);
    }
  });
}

template <typename T>
void apply_h(std::span<const T> in, std::span<T> out, int planes, int w,
             const AxisMap& m, bool transpose) {
  const int ih = transpose ? m.out_size : m.in_size;
  const int oh = transpose ? m.in_size : m.out_size;
  parallel_for(planes, [&](std::size_t p) {
    const T* src = in.data() + p * ih * w;
    T* dst = out.data() + p * oh * w;
    std::vector<double> acc(static_cast<std::size_t>(oh) * w, 0.0);
    for (int o = 0; o < m.out_size; ++o)
      for (int k = m.begin[o]; k < m.begin[o + 1]; ++k) {
        const double wt = m.weight[k];
        const int from = transpose ? o : m.index[k];
        const int to = transpose ? m.index[k] : o;
        for (int x = 0; x < w; ++x) acc[to * w + x] += wt * src[from * w + x];
      }
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
  });
}

}  // namespace

Tensor resize(const Tensor& img, int out_h, int out_w, Kernel kernel) {
  const Shape s = img.shape();
  const AxisMap mw = AxisMap::build(s.w, out_w, kernel);
  const AxisMap mh = AxisMap::build(s.h, out_h, kernel);
  Tensor mid({s.n, s.c, s.h, out_w}, img.dtype());
  Tensor out({s.n, s.c, out_h, out_w}, img.dtype());
  dispatch(img.dtype(), [&]<typename T>() {
    apply_w<T>(img.data<T>(), mid.data<T>(), s.n * s.c * s.h, mw, false);
    apply_h<T>(std::as_const(mid).data<T>(), out.data<T>(), s.n * s.c, out_w,
               mh, false);
  });
  return out;
}

Tensor resize_adjoint(const Tensor& grad, int in_h, int in_w, Kernel kernel) {
  const Shape s = grad.shape();
  const AxisMap mw = AxisMap::build(in_w, s.w, kernel);
  const AxisMap mh = AxisMap::build(in_h, s.h, kernel);
  Tensor mid({s.n, s.c, in_h, s.w}, grad.dtype());
  Tensor out({s.n, s.c, in_h, in_w}, grad.dtype());
  dispatch(grad.dtype(), [&]<typename T>() {
    apply_h<T>(grad.data<T>(), mid.data<T>(), s.n * s.c, s.w, mh, true);
    apply_w<T>(std::as_const(mid).data<T>(), out.data<T>(), s.n * s.c * in_h,
               mw, true);
  });
  return out;
}

ag::Var resize(const ag::Var& img, int out_h, int out_w, Kernel kernel) {
  const int in_h = img.value().shape().h, in_w = img.value().shape().w;
  return ag::linear_op(
      img, "resize",
      [=](const Tensor& t) { return resize(t, out_h, out_w, kernel); },
      [=](const Tensor& g) { return resize_adjoint(g, in_h, in_w, kernel); });
}

namespace {

void check_factor(const char* op, int r) {
  if (r < 1) throw Error(std::string(op) + ": factor must be >= 1, got " +
                         std::to_string(r));
}

// One gather loop serves both directions: `shuffle` selects which side holds
// the packed channel layout.
Tensor rearrange(const Tensor& x, int r, bool shuffle) {
  const Shape s = x.shape();
  Shape os;
  if (shuffle) {
    if (s.c % (r * r) != 0)
      throw ShapeError("pixel_shuffle: channels not divisible by r^2 (r=" +
                           std::to_string(r) + ")",
                       s);
    os = {s.n, s.c / (r * r), s.h * r, s.w * r};
  } else {
    if (s.h % r != 0 || s.w % r != 0)
      throw ShapeError("pixel_unshuffle: extent not divisible by r=" +
                           std::to_string(r),
                       s);
    os = {s.n, s.c * r * r, s.h / r, s.w / r};
  }
  const Shape packed = shuffle ? s : os;
  const Shape spread = shuffle ? os : s;
  Tensor out(os, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (int n = 0; n < spread.n; ++n)
      for (int c = 0; c < spread.c; ++c)
        for (int y = 0; y < spread.h; ++y)
          for (int xx = 0; xx < spread.w; ++xx) {
            const int pc = c * r * r + (y % r) * r + (xx % r);
            const std::size_t pi =
                ((static_cast<std::size_t>(n) * packed.c + pc) * packed.h +
                 y / r) * packed.w + xx / r;
            const std::size_t si =
                ((static_cast<std::size_t>(n) * spread.c + c) * spread.h + y) *
                    spread.w + xx;
            if (shuffle)
              dst[si] = src[pi];
            else
              dst[pi] = src[si];
          }
  });
  return out;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& x, int r) {
  check_factor("pixel_shuffle", r);
  return rearrange(x, r, true);
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
  check_factor("pixel_unshuffle", r);
  return rearrange(x, r, false);
}

ag::Var pixel_shuffle(const ag::Var& x, int r) {
  check_factor("pixel_shuffle", r);
  return ag::linear_op(
      x, "pixel_shuffle", [r](const Tensor& t) { return pixel_shuffle(t, r); },
      [r](const Tensor& g) { return pixel_unshuffle(g, r); });
}

ag::Var pixel_unshuffle(const ag::Var& x, int r) {
  check_factor("pixel_unshuffle", r);
  return ag::linear_op(
      x, "pixel_unshuffle",
      [r](const Tensor& t) { return pixel_unshuffle(t, r); },
      [r](const Tensor& g) { return pixel_shuffle(g, r); });
}

PatchGrid PatchGrid::make(const Shape& source, int d, int stride, int pad) {
  if (d < 1 || stride < 1 || pad < 0)
    throw Error("patch grid needs d >= 1, stride >= 1, pad >= 0 (d=" +
                std::to_string(d) + ", stride=" + std::to_string(stride) +
                ", pad=" + std::to_string(pad) + ")");
  PatchGrid g;
  g.source = source;
  g.d = d;
  g.stride = stride;
  g.pad = pad;
  if (d > g.padded_h() || d > g.padded_w())
    throw ShapeError("patch size " + std::to_string(d) +
                         " exceeds padded map extent (pad " +
                         std::to_string(pad) + ")",
                     source);
  g.count_y = (g.padded_h() - d) / stride + 1;
  g.count_x = (g.padded_w() - d) / stride + 1;
  return g;
}

Patches extract_patches(const Tensor& feat, int d, int stride, int pad) {
  const PatchGrid g = PatchGrid::make(feat.shape(), d, stride, pad);
  const Shape s = feat.shape();
  const int len = g.patch_len();
  Tensor out({s.n, 1, g.count(), len}, feat.dtype());
  dispatch(feat.dtype(), [&]<typename T>() {
    auto src = feat.data<T>();
    auto dst = out.data<T>();
    parallel_for(static_cast<std::size_t>(s.n) * g.count(), [&](std::size_t job) {
      const int n = static_cast<int>(job / g.count());
      const auto [oy, ox] = g.origin(static_cast<int>(job % g.count()));
      T* row = dst.data() + job * len;
      for (int c = 0; c < s.c; ++c)
        for (int dy = 0; dy < d; ++dy)
          for (int dx = 0; dx < d; ++dx) {
            const int y = oy + dy - pad, x = ox + dx - pad;
            *row++ = (y < 0 || x < 0 || y >= s.h || x >= s.w)
                         ? T(0)
                         : src[((static_cast<std::size_t>(n) * s.c + c) * s.h +
                                y) * s.w + x];
          }
    });
  });
  return {out, g};
}

Tensor fold_patches(const Tensor& patches, const PatchGrid& g) {
  const Shape ps = patches.shape();
  const Shape s = g.source;
  if (ps.c != 1 || ps.h != g.count() || ps.w != g.patch_len())
    throw ShapeError("fold_patches: patch tensor does not match grid",
                     ps, Shape{ps.n, 1, g.count(), g.patch_len()});
  const int ph = g.padded_h(), pw = g.padded_w(), d = g.d;
  std::vector<int> cover(static_cast<std::size_t>(ph) * pw, 0);
  for (int i = 0; i < g.count(); ++i) {
    const auto [oy, ox] = g.origin(i);
    for (int dy = 0; dy < d; ++dy)
      for (int dx = 0; dx < d; ++dx) ++cover[(oy + dy) * pw + ox + dx];
  }
  Tensor out({ps.n, s.c, s.h, s.w}, patches.dtype());
  dispatch(patches.dtype(), [&]<typename T>() {
    auto src = patches.data<T>();
    auto dst = out.data<T>();
    parallel_for(static_cast<std::size_t>(ps.n) * s.c, [&](std::size_t job) {
      const int n = static_cast<int>(job / s.c), c = static_cast<int>(job % s.c);
      std::vector<double> acc(static_cast<std::size_t>(ph) * pw, 0.0);
      for (int i = 0; i < g.count(); ++i) {
        const auto [oy, ox] = g.origin(i);
        const T* row = src.data() +
                       (static_cast<std::size_t>(n) * g.count() + i) * g.patch_len() +
                       static_cast<std::size_t>(c) * d * d;
        for (int dy = 0; dy < d; ++dy)
          for (int dx = 0; dx < d; ++dx)
            acc[(oy + dy) * pw + ox + dx] += row[dy * d + dx];
      }
      T* plane = dst.data() + job * s.plane();
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const int k = (y + g.pad) * pw + x + g.pad;
          plane[y * s.w + x] =
              cover[k] ? static_cast<T>(acc[k] / cover[k]) : T(0);
        }
    });
  });
  return out;
}

void DegradeConfig::validate() const {
  if (factor < 1) throw Error("degrade: factor must be >= 1");
  if (block < 1) throw Error("degrade: block must be >= 1");
  if (!(q >= 0.0) || !std::isfinite(q))
    throw Error("degrade: quantization step must be finite and >= 0");
}

std::string DegradeConfig::canonical() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "factor=%d;block=%d;q=%.17g;seed=%llu", factor,
                block, q, static_cast<unsigned long long>(seed));
  return buf;
}

std::uint64_t DegradeConfig::hash() const { return fnv1a64(canonical()); }

Tensor block_dct_quantize(const Tensor& img, int block, double q) {
  if (block < 1) throw Error("block_dct_quantize: block must be >= 1");
  const Shape s = img.shape();
  const int ph = (s.h + block - 1) / block * block;
  const int pw = (s.w + block - 1) / block * block;
  const Tensor padded = kernels::pad_replicate(img, ph - s.h, pw - s.w);
  // basis[k*b + i] = alpha_k cos(pi (2i+1) k / 2b)
  const int b = block;
  std::vector<double> basis(static_cast<std::size_t>(b) * b);
  for (int k = 0; k < b; ++k)
    for (int i = 0; i < b; ++i)
      basis[k * b + i] = std::sqrt((k == 0 ? 1.0 : 2.0) / b) *
                         std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * b));
  Tensor work = padded.clone();
  dispatch(img.dtype(), [&]<typename T>() {
    auto data = work.data<T>();
    parallel_for(static_cast<std::size_t>(s.n) * s.c, [&](std::size_t p) {
      T* plane = data.data() + p * ph * pw;
      std::vector<double> blk(b * b), tmp(b * b);
      for (int by = 0; by < ph; by += b)
        for (int bx = 0; bx < pw; bx += b) {
          for (int y = 0; y < b; ++y)
            for (int x = 0; x < b; ++x) blk[y * b + x] = plane[(by + y) * pw + bx + x];
          // coef = C X C^T
          for (int k = 0; k < b; ++k)
            for (int x = 0; x < b; ++x) {
              double a = 0;
              for (int y = 0; y < b; ++y) a += basis[k * b + y] * blk[y * b + x];
              tmp[k * b + x] = a;
            }
          for (int k = 0; k < b; ++k)
            for (int l = 0; l < b; ++l) {
              double a = 0;
              for (int x = 0; x < b; ++x) a += tmp[k * b + x] * basis[l * b + x];
              blk[k * b + l] = q > 0 ? std::round(a / q) * q : a;
            }
          // X = C^T coef C
          for (int y = 0; y < b; ++y)
            for (int l = 0; l < b; ++l) {
              double a = 0;
              for (int k = 0; k < b; ++k) a += basis[k * b + y] * blk[k * b + l];
              tmp[y * b + l] = a;
            }
          for (int y = 0; y < b; ++y)
            for (int x = 0; x < b; ++x) {
              double a = 0;
              for (int l = 0; l < b; ++l) a += tmp[y * b + l] * basis[l * b + x];
              plane[(by + y) * pw + bx + x] = static_cast<T>(a);
            }
        }
    });
  });
  return kernels::crop(work, 0, 0, s.h, s.w);
}

Tensor degrade(const Tensor& hr, const DegradeConfig& cfg) {
  cfg.validate();
  const Shape s = hr.shape();
  if (s.h % cfg.factor != 0 || s.w % cfg.factor != 0)
    throw ShapeError("degrade: extent not divisible by factor " +
                         std::to_string(cfg.factor),
                     s);
  Tensor lr = resize(hr, s.h / cfg.factor, s.w / cfg.factor, Kernel::Bilinear);
  if (cfg.q > 0.0) lr = block_dct_quantize(lr, cfg.block, cfg.q);
  return kernels::clamp(lr, 0.0, 1.0);
}

}  // namespace stran::image
