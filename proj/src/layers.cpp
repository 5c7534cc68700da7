// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/layers.hpp"

#include <cmath>

namespace stran::nn {

void add_conv(ag::ParamSet& ps, const std::string& name, const ConvSpec& spec,
              std::mt19937_64& rng, DType dtype, bool frozen) {
  Tensor w({spec.out, spec.in, spec.k, spec.k}, dtype);
  if (spec.init == Init::KaimingUniform) {
    const double fan_in = static_cast<double>(spec.in) * spec.k * spec.k;
    const double bound = std::sqrt(6.0 / ((1.0 + kSlope * kSlope) * fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < w.numel(); ++i) w.set(i, u(rng));
  }
  ps.add(name + ".weight", std::move(w), frozen);
  if (spec.bias) ps.add(name + ".bias", Tensor({1, spec.out, 1, 1}, dtype), frozen);
}

ag::Var conv(ag::Graph& g, ag::ParamSet& ps, const std::string& name,
             const ag::Var& x, int stride) {
  ag::Parameter& w = ps.at(name + ".weight");
  ag::Parameter* b = ps.find(name + ".bias");
  return ag::conv2d(x, g.param(w), b ? g.param(*b) : ag::Var(),
                    {stride, w.value.shape().h / 2});
}

}  // namespace stran::nn
