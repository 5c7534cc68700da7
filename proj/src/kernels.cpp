// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <memory>

#include "stran/parallel.hpp"

namespace stran::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

// Output pixels per GEMM chunk. Fixed so that the floating-point reduction
// order never depends on the worker count.
constexpr int kChunkPixels = 8192;

struct ConvPlan {
  Shape in;
  Shape wt;
  Shape out;
  ConvGeometry geo;
  int rows_per_chunk = 1;
  int chunks = 1;
  int k = 0;  // ic * kh * kw
  bool pointwise = false;

  ConvPlan(const Shape& input, const Shape& weight, ConvGeometry g)
      : in(input), wt(weight), geo(g) {
    out = conv2d_output_shape(input, weight, g);
    rows_per_chunk = std::max(1, kChunkPixels / out.w);
    chunks = (out.h + rows_per_chunk - 1) / rows_per_chunk;
    k = wt.c * wt.h * wt.w;
    pointwise = wt.h == 1 && wt.w == 1 && g.stride == 1 && g.padding == 0;
  }
  int row_begin(int chunk) const { return chunk * rows_per_chunk; }
  int row_end(int chunk) const {
    return std::min(out.h, (chunk + 1) * rows_per_chunk);
  }
};

template <typename T>
void im2col(const T* x, const ConvPlan& p, int r0, int r1, T* cols) {
  const int npx = (r1 - r0) * p.out.w;
  const int s = p.geo.stride;
  const int pad = p.geo.padding;
  for (int ci = 0; ci < p.wt.c; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * p.in.plane();
    for (int ky = 0; ky < p.wt.h; ++ky) {
      for (int kx = 0; kx < p.wt.w; ++kx) {
        T* row = cols + (static_cast<std::size_t>(ci * p.wt.h + ky) * p.wt.w + kx) * npx;
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy * s + ky - pad;
          T* dst = row + static_cast<std::size_t>(oy - r0) * p.out.w;
          if (iy < 0 || iy >= p.in.h) {
            std::fill(dst, dst + p.out.w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * p.in.w;
          // Columns with ix = ox*s + kx - pad inside [0, in.w).
          const int off = kx - pad;
          const int lo = std::clamp((-off + s - 1) / s, 0, p.out.w);
          const int hi = std::clamp(off >= p.in.w ? 0 : (p.in.w - 1 - off) / s + 1, lo, p.out.w);
          std::fill(dst, dst + lo, T(0));
          if (s == 1) {
            std::copy(src + lo + off, src + hi + off, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s + off];
          }
          std::fill(dst + hi, dst + p.out.w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvPlan& p, int r0, int r1, T* x) {
  const int npx = (r1 - r0) * p.out.w;
  const int s = p.geo.stride;
  const int pad = p.geo.padding;
  for (int ci = 0; ci < p.wt.c; ++ci) {
    T* plane = x + static_cast<std::size_t>(ci) * p.in.plane();
    for (int ky = 0; ky < p.wt.h; ++ky) {
      for (int kx = 0; kx < p.wt.w; ++kx) {
        const T* row =
            cols + (static_cast<std::size_t>(ci * p.wt.h + ky) * p.wt.w + kx) * npx;
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= p.in.h) continue;
          const T* src = row + static_cast<std::size_t>(oy - r0) * p.out.w;
          T* dst = plane + static_cast<std::size_t>(iy) * p.in.w;
          for (int ox = 0; ox < p.out.w; ++ox) {
            const int ix = ox * s + kx - pad;
            if (ix >= 0 && ix < p.in.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_conv_operands(const Shape& input, const Shape& weight) {
  if (input.c != weight.c)
    throw ShapeError("conv2d: input channels do not match weight", input,
                     weight);
  if (weight.h % 2 == 0 || weight.w % 2 == 0)
    throw ShapeError("conv2d: kernel extents must be odd", weight);
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& weight,
                          ConvGeometry geo) {
  check_conv_operands(input, weight);
  if (geo.stride < 1 || geo.padding < 0)
    throw ShapeError("conv2d: invalid stride/padding", input, weight);
  const int oh = (input.h + 2 * geo.padding - weight.h) / geo.stride + 1;
  const int ow = (input.w + 2 * geo.padding - weight.w) / geo.stride + 1;
  if (input.h + 2 * geo.padding < weight.h ||
      input.w + 2 * geo.padding < weight.w || oh < 1 || ow < 1)
    throw ShapeError("conv2d: kernel larger than padded input", input, weight);
  return Shape{input.n, weight.n, oh, ow};
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              ConvGeometry geo) {
  check_same_dtype("conv2d", input, weight);
  const ConvPlan p(input.shape(), weight.shape(), geo);
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(p.wt.n))
    throw ShapeError("conv2d: bias length does not match output channels",
                     bias.shape(), weight.shape());
  Tensor out(p.out, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    const T* x = input.data<T>().data();
    const T* w = weight.data<T>().data();
    const T* b = bias.defined() ? bias.data<T>().data() : nullptr;
    T* y = out.data<T>().data();
    const ConstMap<T> wm(w, p.wt.n, p.k, Eigen::OuterStride<>(p.k));
    parallel_for(static_cast<std::size_t>(p.in.n) * p.chunks, [&](std::size_t task) {
      const int n = static_cast<int>(task / p.chunks);
      const int chunk = static_cast<int>(task % p.chunks);
      const int r0 = p.row_begin(chunk), r1 = p.row_end(chunk);
      const int npx = (r1 - r0) * p.out.w;
      const T* xn = x + static_cast<std::size_t>(n) * p.in.c * p.in.plane();
      T* yc = y + static_cast<std::size_t>(n) * p.out.c * p.out.plane() +
              static_cast<std::size_t>(r0) * p.out.w;
      MutMap<T> ym(yc, p.out.c, npx, Eigen::OuterStride<>(p.out.plane()));
      if (p.pointwise) {
        const ConstMap<T> xm(xn + static_cast<std::size_t>(r0) * p.in.w, p.in.c,
                             npx, Eigen::OuterStride<>(p.in.plane()));
        ym.noalias() = wm * xm;
      } else {
        std::unique_ptr<T[]> cols(new T[static_cast<std::size_t>(p.k) * npx]);
        im2col(xn, p, r0, r1, cols.get());
        const ConstMap<T> cm(cols.get(), p.k, npx, Eigen::OuterStride<>(npx));
        ym.noalias() = wm * cm;
      }
      if (b) {
        for (int o = 0; o < p.out.c; ++o) ym.row(o).array() += b[o];
      }
    });
  });
  return out;
}

Tensor conv2d_backward_data(const Tensor& grad_out, const Tensor& weight,
                            const Shape& input_shape, ConvGeometry geo) {
  check_same_dtype("conv2d_backward_data", grad_out, weight);
  const ConvPlan p(input_shape, weight.shape(), geo);
  if (grad_out.shape() != p.out)
    throw ShapeError("conv2d_backward_data: gradient shape", grad_out.shape(),
                     p.out);
  Tensor dx(input_shape, grad_out.dtype());
  dispatch(grad_out.dtype(), [&]<typename T>() {
    const T* g = grad_out.data<T>().data();
    const T* w = weight.data<T>().data();
    T* dxp = dx.data<T>().data();
    const ConstMap<T> wm(w, p.wt.n, p.k, Eigen::OuterStride<>(p.k));
    parallel_for(static_cast<std::size_t>(p.in.n), [&](std::size_t ni) {
      const std::size_t n = ni;
      T* dxn = dxp + n * p.in.c * p.in.plane();
      std::vector<T> cols;
      for (int chunk = 0; chunk < p.chunks; ++chunk) {
        const int r0 = p.row_begin(chunk), r1 = p.row_end(chunk);
        const int npx = (r1 - r0) * p.out.w;
        const ConstMap<T> gm(g + n * p.out.c * p.out.plane() +
                                 static_cast<std::size_t>(r0) * p.out.w,
                             p.out.c, npx, Eigen::OuterStride<>(p.out.plane()));
        if (p.pointwise) {
          MutMap<T> dm(dxn + static_cast<std::size_t>(r0) * p.in.w, p.in.c, npx,
                       Eigen::OuterStride<>(p.in.plane()));
          dm.noalias() = wm.transpose() * gm;
        } else {
          cols.resize(static_cast<std::size_t>(p.k) * npx);
          MutMap<T> cm(cols.data(), p.k, npx, Eigen::OuterStride<>(npx));
          cm.noalias() = wm.transpose() * gm;
          col2im_add(cols.data(), p, r0, r1, dxn);
        }
      }
    });
  });
  return dx;
}

Tensor conv2d_backward_filter(const Tensor& input, const Tensor& grad_out,
                              const Shape& weight_shape, ConvGeometry geo) {
  check_same_dtype("conv2d_backward_filter", input, grad_out);
  const ConvPlan p(input.shape(), weight_shape, geo);
  if (grad_out.shape() != p.out)
    throw ShapeError("conv2d_backward_filter: gradient shape", grad_out.shape(),
                     p.out);
  Tensor dw(weight_shape, input.dtype());
  dispatch(input.dtype(), [&]<typename T>() {
    const T* x = input.data<T>().data();
    const T* g = grad_out.data<T>().data();
    std::vector<RowMat<T>> partial(p.in.n);
    parallel_for(static_cast<std::size_t>(p.in.n), [&](std::size_t n) {
      RowMat<T> acc = RowMat<T>::Zero(p.wt.n, p.k);
      const T* xn = x + n * p.in.c * p.in.plane();
      std::vector<T> cols;
      for (int chunk = 0; chunk < p.chunks; ++chunk) {
        const int r0 = p.row_begin(chunk), r1 = p.row_end(chunk);
        const int npx = (r1 - r0) * p.out.w;
        const ConstMap<T> gm(g + n * p.out.c * p.out.plane() +
                                 static_cast<std::size_t>(r0) * p.out.w,
                             p.out.c, npx, Eigen::OuterStride<>(p.out.plane()));
        if (p.pointwise) {
          const ConstMap<T> xm(xn + static_cast<std::size_t>(r0) * p.in.w,
                               p.in.c, npx, Eigen::OuterStride<>(p.in.plane()));
          acc.noalias() += gm * xm.transpose();
        } else {
          cols.resize(static_cast<std::size_t>(p.k) * npx);
          im2col(xn, p, r0, r1, cols.data());
          const ConstMap<T> cm(cols.data(), p.k, npx, Eigen::OuterStride<>(npx));
          acc.noalias() += gm * cm.transpose();
        }
      }
      partial[n] = std::move(acc);
    });
    MutMap<T> out(dw.data<T>().data(), p.wt.n, p.k, Eigen::OuterStride<>(p.k));
    out.setZero();
    for (const auto& part : partial) out += part;
  });
  return dw;
}

Tensor channel_sum(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(Shape{1, s.c, 1, 1}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* p = src.data() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
        T acc = 0;
        for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
        dst[c] += acc;
      }
  });
  return out;
}

Tensor channel_broadcast(const Tensor& x, const Shape& shape) {
  if (x.shape() != Shape{1, shape.c, 1, 1})
    throw ShapeError("channel_broadcast: expected [1,c,1,1]", x.shape(), shape);
  Tensor out(shape, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (int n = 0; n < shape.n; ++n)
      for (int c = 0; c < shape.c; ++c) {
        T* p = dst.data() + (static_cast<std::size_t>(n) * shape.c + c) * shape.plane();
        std::fill(p, p + shape.plane(), src[c]);
      }
  });
  return out;
}

Tensor sample_sum(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, 1, 1, 1}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    const std::size_t per = s.numel() / s.n;
    for (int n = 0; n < s.n; ++n) {
      T acc = 0;
      const T* p = src.data() + n * per;
      for (std::size_t i = 0; i < per; ++i) acc += p[i];
      dst[n] = acc;
    }
  });
  return out;
}

Tensor sample_broadcast(const Tensor& x, const Shape& shape) {
  if (x.shape() != Shape{shape.n, 1, 1, 1})
    throw ShapeError("sample_broadcast: expected [n,1,1,1]", x.shape(), shape);
  Tensor out(shape, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    const std::size_t per = shape.numel() / shape.n;
    for (int n = 0; n < shape.n; ++n)
      std::fill(dst.data() + n * per, dst.data() + (n + 1) * per, src[n]);
  });
  return out;
}

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& map) {
  const Shape s = x.shape();
  if (map.shape() != Shape{s.n, 1, s.h, s.w})
    throw ShapeError("mul_channel_broadcast: map must be [n,1,h,w]",
                     map.shape(), s);
  check_same_dtype("mul_channel_broadcast", x, map);
  Tensor out(s, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto a = x.data<T>();
    auto m = map.data<T>();
    auto d = out.data<T>();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(n) * s.c + c) * s.plane();
        const std::size_t moff = static_cast<std::size_t>(n) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i)
          d[off + i] = a[off + i] * m[moff + i];
      }
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_channels: no inputs");
  Shape s = parts.front().shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& q = p.shape();
    if (q.n != s.n || q.h != s.h || q.w != s.w)
      throw ShapeError("concat_channels: spatial/batch mismatch", s, q);
    check_same_dtype("concat_channels", parts.front(), p);
    channels += q.c;
  }
  s.c = channels;
  Tensor out(s, parts.front().dtype());
  dispatch(out.dtype(), [&]<typename T>() {
    auto dst = out.data<T>();
    for (int n = 0; n < s.n; ++n) {
      T* o = dst.data() + static_cast<std::size_t>(n) * s.c * s.plane();
      for (const auto& p : parts) {
        const std::size_t len = static_cast<std::size_t>(p.shape().c) * s.plane();
        auto src = p.data<T>();
        std::copy_n(src.data() + n * len, len, o);
        o += len;
      }
    }
  });
  return out;
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of bounds",
                     s);
  Shape os = s;
  os.c = count;
  Tensor out(os, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    const std::size_t len = static_cast<std::size_t>(count) * s.plane();
    for (int n = 0; n < s.n; ++n)
      std::copy_n(src.data() + (static_cast<std::size_t>(n) * s.c + begin) * s.plane(),
                  len, dst.data() + n * len);
  });
  return out;
}

Tensor crop(const Tensor& x, int top, int left, int h, int w) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, h, w}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (int nc = 0; nc < s.n * s.c; ++nc)
      for (int y = 0; y < h; ++y) {
        const int sy = y + top;
        if (sy < 0 || sy >= s.h) continue;
        for (int xx = 0; xx < w; ++xx) {
          const int sx = xx + left;
          if (sx < 0 || sx >= s.w) continue;
          dst[(static_cast<std::size_t>(nc) * h + y) * w + xx] =
              src[(static_cast<std::size_t>(nc) * s.h + sy) * s.w + sx];
        }
      }
  });
  return out;
}

Tensor uncrop(const Tensor& x, const Shape& shape, int top, int left) {
  const Shape s = x.shape();
  if (s.n != shape.n || s.c != shape.c)
    throw ShapeError("uncrop: batch/channel mismatch", s, shape);
  Tensor out(shape, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (int nc = 0; nc < s.n * s.c; ++nc)
      for (int y = 0; y < s.h; ++y) {
        const int dy = y + top;
        if (dy < 0 || dy >= shape.h) continue;
        for (int xx = 0; xx < s.w; ++xx) {
          const int dx = xx + left;
          if (dx < 0 || dx >= shape.w) continue;
          dst[(static_cast<std::size_t>(nc) * shape.h + dy) * shape.w + dx] =
              src[(static_cast<std::size_t>(nc) * s.h + y) * s.w + xx];
        }
      }
  });
  return out;
}

Tensor pad_replicate(const Tensor& x, int bottom, int right) {
  const Shape s = x.shape();
  if (bottom == 0 && right == 0) return x;
  Shape os{s.n, s.c, s.h + bottom, s.w + right};
  Tensor out(os, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (int nc = 0; nc < s.n * s.c; ++nc)
      for (int y = 0; y < os.h; ++y) {
        const int sy = std::min(y, s.h - 1);
        for (int xx = 0; xx < os.w; ++xx) {
          const int sx = std::min(xx, s.w - 1);
          dst[(static_cast<std::size_t>(nc) * os.h + y) * os.w + xx] =
              src[(static_cast<std::size_t>(nc) * s.h + sy) * s.w + sx];
        }
      }
  });
  return out;
}

Tensor slice_batch(const Tensor& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.n)
    throw ShapeError("slice_batch: range out of bounds", s);
  Shape os = s;
  os.n = count;
  Tensor out(os, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    const std::size_t per = s.numel() / s.n;
    std::copy_n(src.data() + begin * per, count * per, dst.data());
  });
  return out;
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_batch: no inputs");
  Shape s = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape q = p.shape();
    q.n = s.n;
    if (q != s) throw ShapeError("concat_batch: sample shape mismatch", s, p.shape());
    check_same_dtype("concat_batch", parts.front(), p);
    total += p.shape().n;
  }
  s.n = total;
  Tensor out(s, parts.front().dtype());
  dispatch(out.dtype(), [&]<typename T>() {
    auto dst = out.data<T>();
    std::size_t off = 0;
    for (const auto& p : parts) {
      auto src = p.data<T>();
      std::copy(src.begin(), src.end(), dst.begin() + off);
      off += src.size();
    }
  });
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = std::clamp(src[i], static_cast<T>(lo), static_cast<T>(hi));
  });
  return out;
}

}  // namespace stran::kernels
