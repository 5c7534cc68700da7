// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Named convolution layers over a ParamSet. A layer "x" owns parameters
// "x.weight" [out,in,k,k] and, optionally, "x.bias" [1,out,1,1].

#pragma once

#include <random>
#include <string>

#include "stran/autodiff.hpp"

namespace stran::nn {

inline constexpr double kSlope = 0.2;

enum class Init { KaimingUniform, Zero };

struct ConvSpec {
  int in = 1;
  int out = 1;
  int k = 3;
  bool bias = true;
  Init init = Init::KaimingUniform;
};

/// Weights ~ U(-b, b), b = sqrt(6 / ((1 + slope^2) fan_in)); biases zero.
void add_conv(ag::ParamSet& ps, const std::string& name, const ConvSpec& spec,
              std::mt19937_64& rng, DType dtype, bool frozen = false);

/// "Same" padding (k/2) convolution with the named layer.
ag::Var conv(ag::Graph& g, ag::ParamSet& ps, const std::string& name,
             const ag::Var& x, int stride = 1);

}  // namespace stran::nn
