// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/backbone.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "stran/image_ops.hpp"
#include "stran/kernels.hpp"
#include "stran/layers.hpp"

namespace stran::backbone {

namespace {

std::string block_conv(int b, int j) {
  return "block" + std::to_string(b) + ".conv" + std::to_string(j);
}
std::string inj_name(int scale, const char* kind, int j) {
  return "inject" + std::to_string(scale) + "." + kind + std::to_string(j);
}
std::string blend_name(int scale) { return "blend" + std::to_string(scale); }
std::string head_name(int j) { return "head.conv" + std::to_string(j); }

int head_stages(int factor) {
  int n = 0;
  while ((1 << n) < factor) ++n;
  return n;
}

}  // namespace

void BackboneConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error("backbone config: " + m); };
  if (radius < 0) fail("radius must be >= 0");
  if (channels < 1 || head_channels < 1) fail("channel counts must be >= 1");
  if (blocks < 1) fail("blocks must be >= 1");
  if (factor < 2 || (factor & (factor - 1)) != 0)
    fail("factor must be a power of 2 >= 2, got " + std::to_string(factor));
  if (inject.size() > static_cast<std::size_t>(tt::kScales))
    fail("at most " + std::to_string(tt::kScales) + " injection points");
  for (std::size_t i = 0; i < inject.size(); ++i) {
    if (inject[i] < 1 || inject[i] >= blocks)
      fail("injection point " + std::to_string(inject[i]) + " outside [1, blocks)");
    if (i > 0 && inject[i] <= inject[i - 1]) fail("injection points must increase");
  }
  if (taps.empty()) fail("at least one fusion tap");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 1 || taps[i] > blocks)
      fail("fusion tap " + std::to_string(taps[i]) + " outside [1, blocks]");
    if (i > 0 && taps[i] <= taps[i - 1]) fail("fusion taps must increase");
  }
}

Generator Generator::init(const BackboneConfig& cfg, std::uint64_t seed,
                          DType dtype) {
  cfg.validate();
  Generator gen;
  gen.cfg = cfg;
  auto& ps = gen.params;
  std::mt19937_64 rng(seed);
  const int c = cfg.channels;
  nn::add_conv(ps, "stem", {cfg.frames() * 3, c, 3}, rng, dtype);
  for (int b = 1; b <= cfg.blocks; ++b) {
    nn::add_conv(ps, block_conv(b, 1), {c, c, 3}, rng, dtype);
    nn::add_conv(ps, block_conv(b, 2), {c, c, 3, true, nn::Init::Zero}, rng, dtype);
  }
  tt::add_lte_params(ps, cfg.lte, rng, dtype);
  for (std::size_t i = 0; i < cfg.inject.size(); ++i) {
    const int s = static_cast<int>(i) + 1;
    for (int j = 1; j < s; ++j) {
      nn::add_conv(ps, inj_name(s, "down", j), {c, c, 3}, rng, dtype);
      nn::add_conv(ps, inj_name(s, "up", j), {c, 4 * c, 3, false}, rng, dtype);
    }
    tt::add_blend_params(ps, blend_name(s), c,
                         tt::packed_channels(cfg.lte, s - 1, cfg.factor), dtype);
  }
  nn::add_conv(ps, "fuse", {static_cast<int>(cfg.taps.size()) * c, c, 1}, rng, dtype);
  int in = c;
  const int stages = head_stages(cfg.factor);
  for (int j = 1; j <= stages; ++j) {
    nn::add_conv(ps, head_name(j), {in, 4 * cfg.head_channels, 3}, rng, dtype);
    in = cfg.head_channels;
  }
  nn::add_conv(ps, head_name(stages + 1), {in, 3, 3}, rng, dtype);
  return gen;
}

std::size_t expected_param_count(const BackboneConfig& cfg) {
  auto conv = [](std::size_t in, std::size_t out, std::size_t k, bool bias) {
    return in * out * k * k + (bias ? out : 0);
  };
  const std::size_t c = cfg.channels, hc = cfg.head_channels;
  std::size_t total = conv(cfg.frames() * 3, c, 3, true);
  total += 2 * cfg.blocks * conv(c, c, 3, true);
  std::size_t in = 3;
  for (int w : cfg.lte.widths) {
    total += conv(in, w, 3, true);
    in = w;
  }
  for (std::size_t i = 0; i < cfg.inject.size(); ++i) {
    total += i * (conv(c, c, 3, true) + conv(c, 4 * c, 3, false));
    total += conv(c + cfg.lte.widths[i] * cfg.factor * cfg.factor, c, 1, true);
  }
  total += conv(cfg.taps.size() * c, c, 1, true);
  in = c;
  for (int j = 0; j < head_stages(cfg.factor); ++j) {
    total += conv(in, 4 * hc, 3, true);
    in = hc;
  }
  return total + conv(in, 3, 3, true);
}

Tensor assemble_window(const std::vector<Tensor>& frames, int t, int radius) {
  if (frames.empty()) throw Error("assemble_window: empty clip");
  const int len = static_cast<int>(frames.size());
  if (t < 0 || t >= len)
    throw Error("assemble_window: frame index " + std::to_string(t) +
                " outside clip of " + std::to_string(len));
  std::vector<Tensor> parts;
  for (int o = -radius; o <= radius; ++o) {
    const Tensor& f = frames[std::clamp(t + o, 0, len - 1)];
    if (f.shape().c != 3) throw ShapeError("assemble_window: frames must have 3 channels", f.shape());
    parts.push_back(f);
  }
  return kernels::concat_channels(parts);
}

ag::Var stem(ag::Graph& g, Generator& gen, const ag::Var& window) {
  if (window.shape().c != gen.cfg.frames() * 3)
    throw ShapeError("stem: expected " + std::to_string(gen.cfg.frames()) +
                         " frames of 3 channels",
                     window.shape());
  return ag::leaky_relu(nn::conv(g, gen.params, "stem", window), nn::kSlope);
}

ag::Var residual_block(ag::Graph& g, ag::ParamSet& ps, int index, const ag::Var& x) {
  ag::Var h = ag::leaky_relu(nn::conv(g, ps, block_conv(index, 1), x), nn::kSlope);
  return ag::add(x, nn::conv(g, ps, block_conv(index, 2), h));
}

ForwardResult generator_forward(ag::Graph& g, Generator& gen,
                                const Tensor& window, const Tensor& ref,
                                const tt::Textures* reuse_matching) {
  const BackboneConfig& cfg = gen.cfg;
  auto& ps = gen.params;
  const Shape ws = window.shape(), rs = ref.shape();
  if (ws.c != cfg.frames() * 3)
    throw ShapeError("generator_forward: expected " + std::to_string(cfg.frames()) +
                         " frames of 3 channels",
                     ws);
  if (rs.n != ws.n || rs.c != 3 || rs.h != ws.h * cfg.factor || rs.w != ws.w * cfg.factor)
    throw ShapeError("generator_forward: reference must be " +
                         std::to_string(cfg.factor) + "x the window",
                     rs, ws);
  ForwardResult res;
  res.pad_bottom = (4 - ws.h % 4) % 4;
  res.pad_right = (4 - ws.w % 4) % 4;
  const Tensor win = kernels::pad_replicate(window, res.pad_bottom, res.pad_right);
  const Tensor refp = kernels::pad_replicate(ref, res.pad_bottom * cfg.factor,
                                             res.pad_right * cfg.factor);
  const Tensor centre = kernels::slice_channels(win, cfg.radius * 3, 3);
  res.tex = tt::prepare_textures(g, ps, ag::Var(centre), ag::Var(refp), cfg.factor,
                                 cfg.match, reuse_matching);

  const ag::Var base = stem(g, gen, ag::Var(win));
  ag::Var x = base;
  std::vector<ag::Var> tapped;
  for (int b = 1; b <= cfg.blocks; ++b) {
    x = residual_block(g, ps, b, x);
    const auto it = std::find(cfg.inject.begin(), cfg.inject.end(), b);
    if (it != cfg.inject.end()) {
      const int s = static_cast<int>(it - cfg.inject.begin()) + 1;
      ag::Var f = x;
      for (int j = 1; j < s; ++j)
        f = ag::leaky_relu(nn::conv(g, ps, inj_name(s, "down", j), f, 2), nn::kSlope);
      ag::Var delta = ag::sub(
          tt::blend(g, ps, blend_name(s), f, res.tex.packed[s - 1], res.tex.gate[s - 1]), f);
      for (int j = s - 1; j >= 1; --j)
        delta = image::pixel_shuffle(nn::conv(g, ps, inj_name(s, "up", j), delta), 2);
      x = ag::add(x, delta);
    }
    if (std::find(cfg.taps.begin(), cfg.taps.end(), b) != cfg.taps.end())
      tapped.push_back(x);
  }
  ag::Var y = ag::leaky_relu(nn::conv(g, ps, "fuse", ag::concat_channels(tapped)),
                             nn::kSlope);
  y = ag::add(y, base);
  const int stages = head_stages(cfg.factor);
  for (int j = 1; j <= stages; ++j)
    y = ag::leaky_relu(image::pixel_shuffle(nn::conv(g, ps, head_name(j), y), 2),
                       nn::kSlope);
  y = nn::conv(g, ps, head_name(stages + 1), y);
  if (res.pad_bottom || res.pad_right)
    y = ag::crop(y, 0, 0, rs.h, rs.w);
  res.out = y;
  return res;
}

Tensor enhance(Generator& gen, const Tensor& window, const Tensor& ref) {
  ag::Graph g(false);
  return kernels::clamp(generator_forward(g, gen, window, ref).out.value(), 0.0, 1.0);
}

}  // namespace stran::backbone
