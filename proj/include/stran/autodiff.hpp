// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over an explicitly recorded graph.
//
// Every operator's adjoint is itself expressed with recorded operators, so a
// gradient can be differentiated again (input_gradient with create_graph).
// Second-order results are exact for graphs built from conv2d, leaky_relu,
// the elementwise ops, the reductions and concat/slice. abs() and sqrt()
// treat their local derivative as a constant; their second derivative is
// reported as zero.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stran/kernels.hpp"
#include "stran/tensor.hpp"

namespace stran::ag {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value, zero until a backward pass
  bool frozen = false;

  void zero_grad();
};

/// Named parameters in insertion order. Addresses are stable.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Parameter& add(std::string name, Tensor value, bool frozen = false);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::vector<Parameter*> list();
  std::vector<const Parameter*> list() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();
  /// Adds every parameter of `other`, prefixing names with `prefix`.
  void absorb(ParamSet&& other, std::string_view prefix = {});

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Graph;

/// A value flowing through a graph. Vars created without a graph, or while
/// the graph is not recording, are constants and carry no gradient.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value) : value_(std::move(value)) {}

  const Tensor& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  DType dtype() const { return value_.dtype(); }
  bool defined() const { return value_.defined(); }
  bool requires_grad() const { return id_ >= 0; }
  int id() const { return id_; }
  Graph* graph() const { return graph_; }
  Var detach() const { return Var(value_); }

 private:
  friend class Graph;
  Tensor value_;
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Gradient with respect to each input; an undefined Var means "none".
/// `need[i]` is false for inputs whose gradient is not wanted.
using BackwardFn =
    std::function<std::vector<Var>(const Var& grad, const std::vector<bool>& need)>;

class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaf that accepts gradients but is not a parameter.
  Var input(Tensor value);
  /// Leaf bound to a parameter; repeated calls return the same node. Frozen
  /// parameters come back as constants.
  Var param(Parameter& p);

  /// Appends an operator node; constant result when nothing needs a gradient.
  Var record(Tensor value, const char* op, std::vector<Var> inputs,
             BackwardFn backward);

  /// Accumulates d(root)/d(p) into every reachable, non-frozen parameter.
  void backward(const Var& root);
  /// d(root)/d(wrt). With create_graph the result is itself recorded, so a
  /// scalar built from it can be differentiated again.
  Var input_gradient(const Var& root, const Var& wrt, bool create_graph = true);

 private:
  struct Node {
    const char* op = "";
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<std::optional<Var>> sweep(const Var& root,
                                        const std::vector<char>* reach);
  void check_root(const Var& root) const;

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  bool recording_;
};

void backward(const Var& root);
Var input_gradient(const Var& root, const Var& wrt, bool create_graph = true);

// Differentiable operators.

Var conv2d(const Var& input, const Var& weight, const Var& bias,
           kernels::ConvGeometry geo);
Var conv2d_backward_data(const Var& grad_out, const Var& weight,
                         const Shape& input_shape, kernels::ConvGeometry geo);
Var conv2d_backward_filter(const Var& input, const Var& grad_out,
                           const Shape& weight_shape, kernels::ConvGeometry geo);

Var leaky_relu(const Var& x, double slope);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var abs(const Var& a);
Var sqrt(const Var& a);

Var sum(const Var& x);          // -> [1,1,1,1]
Var mean(const Var& x);         // -> [1,1,1,1]
Var sample_sum(const Var& x);   // -> [n,1,1,1]
Var sample_mean(const Var& x);  // -> [n,1,1,1]

Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int count);
Var crop(const Var& x, int top, int left, int h, int w);
/// Multiplies every channel by a constant [n,1,h,w] map.
Var mul_map(const Var& x, const Tensor& map);

using LinearFn = std::function<Tensor(const Tensor&)>;
/// Operator given by a fixed linear map and its transpose. The adjoint node
/// is again a linear_op, so these compose to any order.
Var linear_op(const Var& x, const char* name, LinearFn forward, LinearFn adjoint);

// Finite-difference verification.

struct GradCheckOptions {
  double eps = 1e-6;
  /// Fraction of coordinates probed per parameter (at least one each).
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
  /// Relative errors are |a-n| / max(|a|, |n|, floor_fraction * max|a|).
  double floor_fraction = 1e-3;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences over the given parameters. Parameters must be f64.
GradCheckReport grad_check(const std::function<Var(Graph&)>& f,
                           std::span<Parameter* const> params,
                           GradCheckOptions opts = {});

}  // namespace stran::ag
