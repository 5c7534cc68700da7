// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "stran/autodiff.hpp"
#include "stran/image_ops.hpp"

using namespace stran;
namespace im = stran::image;

namespace {

// Dense resampling matrix written straight from the kernel definition.
std::vector<std::vector<double>> dense_axis(int in, int out, im::Kernel k) {
  std::vector<std::vector<double>> m(out, std::vector<double>(in, 0.0));
  for (int o = 0; o < out; ++o) {
    const double x = (o + 0.5) * in / out - 0.5;
    for (int j = -3; j < in + 3; ++j) {
      const double t = std::abs(x - j);
      double w;
      if (k == im::Kernel::Bilinear) {
        w = t < 1.0 ? 1.0 - t : 0.0;
      } else {
        const double a = -0.5;
        w = t <= 1 ? (a + 2) * t * t * t - (a + 3) * t * t + 1
            : t < 2 ? a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a
                    : 0.0;
      }
      m[o][std::clamp(j, 0, in - 1)] += w;
    }
  }
  return m;
}

Tensor dense_resize(const Tensor& x, int oh, int ow, im::Kernel k) {
  const Shape s = x.shape();
  auto mh = dense_axis(s.h, oh, k), mw = dense_axis(s.w, ow, k);
  Tensor out({s.n, s.c, oh, ow}, DType::F64);
  std::size_t i = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int xo = 0; xo < ow; ++xo) {
          double acc = 0;
          for (int yi = 0; yi < s.h; ++yi)
            for (int xi = 0; xi < s.w; ++xi)
              acc += mh[y][yi] * mw[xo][xi] * x.at(n, c, yi, xi);
          out.set(i++, acc);
        }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
  return s;
}

}  // namespace

TEST_CASE("resize preserves constants and is linear") {
  for (auto k : {im::Kernel::Bilinear, im::Kernel::Bicubic}) {
    Tensor c = Tensor::full({1, 2, 7, 5}, 0.37, DType::F64);
    Tensor r = im::resize(c, 13, 11, k);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r.at(i) == doctest::Approx(0.37).epsilon(1e-14));
    Tensor a = oracle::random_tensor({1, 2, 7, 5}, 1), b = oracle::random_tensor({1, 2, 7, 5}, 2);
    Tensor ab = a.clone();
    for (std::size_t i = 0; i < ab.numel(); ++i) ab.set(i, 2 * a.at(i) - 3 * b.at(i));
    Tensor ra = im::resize(a, 4, 9, k), rb = im::resize(b, 4, 9, k), rab = im::resize(ab, 4, 9, k);
    for (std::size_t i = 0; i < rab.numel(); ++i)
      CHECK(rab.at(i) == doctest::Approx(2 * ra.at(i) - 3 * rb.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("bilinear 2x upscale of a step interpolates the centre columns") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 0, 1}, DType::F64);
  Tensor r = im::resize(x, 4, 4, im::Kernel::Bilinear);
  const double row[4] = {0, 0.25, 0.75, 1};
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c) CHECK(r.at(0, 0, y, c) == doctest::Approx(row[c]));
}

TEST_CASE("resize matches the dense-matrix oracle") {
  const int sizes[][4] = {{6, 6, 12, 12}, {9, 5, 4, 3}, {8, 8, 2, 2}, {5, 7, 17, 6}, {1, 3, 4, 1}};
  for (auto k : {im::Kernel::Bilinear, im::Kernel::Bicubic})
    for (const auto& sz : sizes) {
      Tensor x = oracle::random_tensor({2, 2, sz[0], sz[1]}, sz[2] * 31 + sz[3]);
      CHECK(max_abs_diff(im::resize(x, sz[2], sz[3], k), dense_resize(x, sz[2], sz[3], k)) < 1e-13);
    }
}

TEST_CASE("resize at the same extent is the identity") {
  Tensor x = oracle::random_tensor({1, 3, 6, 5}, 4);
  CHECK(max_abs_diff(im::resize(x, 6, 5, im::Kernel::Bicubic), x) < 1e-15);
}

TEST_CASE("resize adjoint satisfies <Ax, y> = <x, A^T y>") {
  for (auto k : {im::Kernel::Bilinear, im::Kernel::Bicubic}) {
    Tensor x = oracle::random_tensor({2, 3, 7, 10}, 5);
    Tensor y = oracle::random_tensor({2, 3, 15, 4}, 6);
    const double lhs = dot(im::resize(x, 15, 4, k), y);
    const double rhs = dot(x, im::resize_adjoint(y, 7, 10, k));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("pixel shuffle layout") {
  Tensor x = Tensor::from({1, 4, 1, 1}, {1, 2, 3, 4}, DType::F64);
  Tensor s = im::pixel_shuffle(x, 2);
  CHECK(s.shape() == Shape{1, 1, 2, 2});
  CHECK(s.to_vector() == std::vector<double>{1, 2, 3, 4});

  Tensor y = oracle::random_tensor({2, 3, 4, 5}, 7);
  CHECK(bit_equal(im::pixel_shuffle(y, 1), y));

  Tensor z = oracle::random_tensor({2, 16, 5, 7}, 8);
  Tensor up = im::pixel_shuffle(z, 4);
  CHECK(up.shape() == Shape{2, 1, 20, 28});
  CHECK(bit_equal(im::pixel_unshuffle(up, 4), z));
  for (int c = 0; c < 16; ++c)
    CHECK(up.at(1, 0, 3 * 4 + c / 4, 2 * 4 + c % 4) == z.at(1, c, 3, 2));

  CHECK_THROWS_AS(im::pixel_shuffle(z, 3), ShapeError);
  CHECK_THROWS_AS(im::pixel_unshuffle(z, 2), ShapeError);
}

TEST_CASE("pixel shuffle gradients are the inverse permutation") {
  ag::Parameter p{"x", oracle::random_tensor({1, 8, 3, 2}, 9)};
  Tensor w = oracle::random_tensor({1, 2, 6, 4}, 10);
  auto f = [&](ag::Graph& g) {
    ag::Var s = im::pixel_shuffle(g.param(p), 2);
    ag::Var u = im::pixel_unshuffle(im::resize(s, 6, 4, im::Kernel::Bicubic), 2);
    return ag::sum(ag::mul(im::pixel_shuffle(u, 2), ag::Var(w)));
  };
  ag::Parameter* ps[] = {&p};
  CHECK(ag::grad_check(f, ps).max_rel_error < 1e-7);
}

TEST_CASE("patch extraction layout and fold") {
  Tensor x = oracle::random_tensor({2, 3, 4, 4}, 11);
  auto p1 = im::extract_patches(x, 1, 1);
  CHECK(p1.values.shape() == Shape{2, 1, 16, 3});
  CHECK(bit_equal(im::fold_patches(p1.values, p1.grid), x));

  auto p2 = im::extract_patches(x, 2, 2);
  CHECK(p2.grid.count() == 4);
  CHECK(p2.values.shape() == Shape{2, 1, 4, 12});
  CHECK(bit_equal(im::fold_patches(p2.values, p2.grid), x));

  Tensor y = oracle::random_tensor({1, 2, 5, 5}, 12);
  auto p3 = im::extract_patches(y, 3, 1, 1);
  CHECK(p3.grid.count() == 25);
  for (int i : {0, 7, 24}) {
    const auto [oy, ox] = p3.grid.origin(i);
    auto ref = oracle::patch(y, 0, oy, ox, 3, 1);
    for (int k = 0; k < 18; ++k) CHECK(p3.values.at(0, 0, i, k) == ref[k]);
  }
  CHECK(max_abs_diff(im::fold_patches(p3.values, p3.grid), y) < 1e-15);

  auto p4 = im::extract_patches(y, 3, 1, 0);
  CHECK(p4.grid.count() == 9);
  CHECK(max_abs_diff(im::fold_patches(p4.values, p4.grid), y) < 1e-15);

  CHECK_THROWS_AS(im::extract_patches(y, 6, 1), ShapeError);
  CHECK_THROWS_AS(im::fold_patches(p3.values, p4.grid), ShapeError);
}

TEST_CASE("degrade without quantization is the bilinear downscale") {
  Tensor hr = oracle::random_tensor({1, 3, 32, 24}, 13, 0.0, 1.0);
  im::DegradeConfig cfg;
  CHECK(bit_equal(im::degrade(hr, cfg), im::resize(hr, 8, 6, im::Kernel::Bilinear)));
  cfg.factor = 3;
  CHECK_THROWS_AS(im::degrade(hr, cfg), ShapeError);
}

TEST_CASE("degrade keeps constant images constant") {
  Tensor hr = Tensor::full({1, 3, 64, 64}, 0.5, DType::F64);
  im::DegradeConfig cfg{4, 8, 0.05, 3};
  Tensor lr = im::degrade(hr, cfg);
  CHECK(lr.shape() == Shape{1, 3, 16, 16});
  for (std::size_t i = 0; i < lr.numel(); ++i) CHECK(lr.at(i) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("block quantization matches a separable DCT oracle") {
  Tensor img = oracle::random_tensor({1, 1, 32, 32}, 14, 0.0, 1.0);
  const double q = 0.05;
  Tensor got = im::block_dct_quantize(img, 8, q);
  for (int by = 0; by < 32; by += 8)
    for (int bx = 0; bx < 32; bx += 8) {
      std::vector<std::vector<double>> blk(8, std::vector<double>(8));
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) blk[y][x] = img.at(0, 0, by + y, bx + x);
      for (auto& row : blk) row = oracle::dct(row);
      for (int x = 0; x < 8; ++x) {
        std::vector<double> col(8);
        for (int y = 0; y < 8; ++y) col[y] = blk[y][x];
        col = oracle::dct(col);
        for (int y = 0; y < 8; ++y) blk[y][x] = std::round(col[y] / q) * q;
      }
      for (int x = 0; x < 8; ++x) {
        std::vector<double> col(8);
        for (int y = 0; y < 8; ++y) col[y] = blk[y][x];
        col = oracle::idct(col);
        for (int y = 0; y < 8; ++y) blk[y][x] = col[y];
      }
      for (int y = 0; y < 8; ++y) {
        auto row = oracle::idct(blk[y]);
        for (int x = 0; x < 8; ++x) CHECK(std::abs(got.at(0, 0, by + y, bx + x) - row[x]) < 1e-5);
      }
    }
}

TEST_CASE("block quantization is idempotent and pads partial blocks") {
  Tensor img = oracle::random_tensor({2, 3, 19, 13}, 15, 0.0, 1.0);
  Tensor once = im::block_dct_quantize(img, 8, 0.1);
  CHECK(once.shape() == img.shape());
  Tensor twice = im::block_dct_quantize(once, 8, 0.1);
  // Partial edge blocks re-pad from quantized data, so only interior blocks
  // are exactly fixed points.
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 8; ++x)
          CHECK(std::abs(twice.at(n, c, y, x) - once.at(n, c, y, x)) < 1e-9);
}

TEST_CASE("degrade config hash is stable and sensitive") {
  im::DegradeConfig a{4, 8, 0.05, 1}, b = a;
  CHECK(a.hash() == b.hash());
  CHECK(a.canonical() == "factor=4;block=8;q=0.050000000000000003;seed=1");
  b.seed = 2;
  CHECK(a.hash() != b.hash());
  b = a;
  b.q = 0.06;
  CHECK(a.hash() != b.hash());
  im::DegradeConfig bad{4, 8, -1.0, 0};
  CHECK_THROWS(bad.validate());
}
