// Copyright 2026 The stran Authors
// SPDX-License-Identifier: Apache-2.0

#include "stran/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace stran::ag {

namespace {

template <typename F>
Tensor map1(const Tensor& a, F f) {
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = out.data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(f(x[i]));
  });
  return out;
}

template <typename F>
Tensor map2(const char* op, const Tensor& a, const Tensor& b, F f) {
  check_same_shape(op, a, b);
  check_same_dtype(op, a, b);
  Tensor out(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto z = b.data<T>();
    auto y = out.data<T>();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i], z[i]);
  });
  return out;
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  return map2("add", a, b, [](auto x, auto y) { return x + y; });
}

Var make(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn fn) {
  Graph* g = nullptr;
  for (const Var& v : inputs) {
    if (!v.requires_grad()) continue;
    if (g && v.graph() != g) throw Error(std::string(op) + ": operands belong to different graphs");
    g = v.graph();
  }
  if (!g) return Var(std::move(value));
  return g->record(std::move(value), op, std::move(inputs), std::move(fn));
}

Tensor zeros_channels(const Shape& like, int c, DType dt) {
  Shape s = like;
  s.c = c;
  return Tensor(s, dt);
}

}  // namespace

void Parameter::zero_grad() { grad = Tensor(value.shape(), value.dtype()); }

Parameter& ParamSet::add(std::string name, Tensor value, bool frozen) {
  if (index_.count(name)) throw Error("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.shape(), value.dtype());
  p->value = std::move(value);
  p->frozen = frozen;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParamSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParamSet::at(std::string_view name) {
  Parameter* p = find(name);
  if (!p) throw Error("unknown parameter: " + std::string(name));
  return *p;
}

const Parameter& ParamSet::at(std::string_view name) const {
  const Parameter* p = find(name);
  if (!p) throw Error("unknown parameter: " + std::string(name));
  return *p;
}

std::vector<Parameter*> ParamSet::list() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamSet::list() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParamSet::absorb(ParamSet&& other, std::string_view prefix) {
  for (auto& p : other.params_) {
    Parameter& q = add(std::string(prefix) + p->name, p->value, p->frozen);
    q.grad = p->grad;
  }
  other.params_.clear();
  other.index_.clear();
}

Var Graph::input(Tensor value) {
  Var v(std::move(value));
  if (!recording_) return v;
  v.graph_ = this;
  v.id_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"input", {}, nullptr, nullptr});
  return v;
}

Var Graph::param(Parameter& p) {
  if (p.frozen || !recording_) return Var(p.value);
  auto it = param_nodes_.find(&p);
  Var v(p.value);
  v.graph_ = this;
  if (it != param_nodes_.end()) {
    v.id_ = it->second;
    return v;
  }
  v.id_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"param", {}, nullptr, &p});
  param_nodes_.emplace(&p, v.id_);
  return v;
}

Var Graph::record(Tensor value, const char* op, std::vector<Var> inputs,
                  BackwardFn backward) {
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  if (!recording_ || !any) return Var(std::move(value));
  Node node;
  node.op = op;
  node.backward = std::move(backward);
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.requires_grad() && v.graph_ != this)
      throw Error(std::string(op) + ": operand recorded on another graph");
    node.inputs.push_back(v.id_);
  }
  Var out(std::move(value));
  out.graph_ = this;
  out.id_ = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  return out;
}

void Graph::check_root(const Var& root) const {
  if (root.graph() != this || root.id() < 0)
    throw Error("root is not a node of this graph");
  if (root.value().numel() != 1)
    throw ShapeError("backward: root must be a scalar", root.shape());
}

std::vector<std::optional<Var>> Graph::sweep(const Var& root,
                                             const std::vector<char>* reach) {
  std::vector<std::optional<Var>> grads(static_cast<std::size_t>(root.id()) + 1);
  grads[root.id()] = Var(Tensor::full(root.shape(), 1.0, root.dtype()));
  for (int id = root.id(); id >= 0; --id) {
    if (!grads[id]) continue;
    // The backward call may append nodes, so copy what is needed first.
    const std::vector<int> ins = nodes_[id].inputs;
    if (ins.empty()) continue;
    std::vector<bool> need(ins.size(), false);
    bool any = false;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      need[i] = ins[i] >= 0 && (!reach || (*reach)[ins[i]]);
      any = any || need[i];
    }
    if (!any) continue;
    const BackwardFn fn = nodes_[id].backward;
    const Var g = *grads[id];
    const std::vector<Var> gin = fn(g, need);
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (!need[i] || i >= gin.size() || !gin[i].defined()) continue;
      auto& slot = grads[ins[i]];
      slot = slot ? add(*slot, gin[i]) : gin[i];
    }
  }
  return grads;
}

void Graph::backward(const Var& root) {
  if (!root.requires_grad()) return;
  check_root(root);
  const bool was = recording_;
  recording_ = false;
  std::vector<std::optional<Var>> grads;
  try {
    grads = sweep(root, nullptr);
  } catch (...) {
    recording_ = was;
    throw;
  }
  recording_ = was;
  for (std::size_t id = 0; id < grads.size(); ++id) {
    Parameter* p = nodes_[id].param;
    if (!p || !grads[id]) continue;
    const Tensor& g = grads[id]->value();
    if (!p->grad.defined() || p->grad.shape() != p->value.shape())
      p->zero_grad();
    p->grad = add_tensors(p->grad, g);
  }
}

Var Graph::input_gradient(const Var& root, const Var& wrt, bool create_graph) {
  if (wrt.graph() != this || wrt.id() < 0)
    throw Error("input_gradient: wrt is not a node of this graph");
  if (root.graph() == this && root.id() >= 0) check_root(root);
  if (!root.requires_grad() || root.graph() != this || wrt.id() > root.id())
    return Var(Tensor(wrt.shape(), wrt.dtype()));

  std::vector<char> reach(static_cast<std::size_t>(root.id()) + 1, 0);
  reach[wrt.id()] = 1;
  for (int id = wrt.id() + 1; id <= root.id(); ++id)
    for (int in : nodes_[id].inputs)
      if (in >= 0 && reach[in]) {
        reach[id] = 1;
        break;
      }
  if (!reach[root.id()]) return Var(Tensor(wrt.shape(), wrt.dtype()));

  const bool was = recording_;
  recording_ = create_graph;
  std::vector<std::optional<Var>> grads;
  try {
    grads = sweep(root, &reach);
  } catch (...) {
    recording_ = was;
    throw;
  }
  recording_ = was;
  if (!grads[wrt.id()]) return Var(Tensor(wrt.shape(), wrt.dtype()));
  return *grads[wrt.id()];
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  root.graph()->backward(root);
}

Var input_gradient(const Var& root, const Var& wrt, bool create_graph) {
  if (!wrt.requires_grad())
    throw Error("input_gradient: wrt is not a node of any graph");
  return wrt.graph()->input_gradient(root, wrt, create_graph);
}

// ---------------------------------------------------------------------------

Var linear_op(const Var& x, const char* name, LinearFn forward, LinearFn adjoint) {
  Tensor value = forward(x.value());
  auto fn = [name, forward, adjoint](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{linear_op(g, name, adjoint, forward)};
  };
  return make(std::move(value), name, {x}, std::move(fn));
}

Var conv2d(const Var& input, const Var& weight, const Var& bias,
           kernels::ConvGeometry geo) {
  Tensor value = kernels::conv2d(input.value(), weight.value(),
                                 bias.defined() ? bias.value() : Tensor(), geo);
  const Shape bias_shape = bias.defined() ? bias.shape() : Shape{};
  auto fn = [input, weight, geo, bias_shape](const Var& g,
                                             const std::vector<bool>& need) {
    std::vector<Var> out(3);
    if (need[0]) out[0] = conv2d_backward_data(g, weight, input.shape(), geo);
    if (need[1]) out[1] = conv2d_backward_filter(input, g, weight.shape(), geo);
    if (need.size() > 2 && need[2]) {
      const Shape gs = g.shape();
      out[2] = linear_op(
          g, "bias_grad",
          [bias_shape](const Tensor& t) {
            return kernels::channel_sum(t).reshape(bias_shape);
          },
          [gs](const Tensor& t) {
            return kernels::channel_broadcast(t.reshape(Shape{1, gs.c, 1, 1}), gs);
          });
    }
    return out;
  };
  std::vector<Var> ins{input, weight};
  if (bias.defined()) ins.push_back(bias);
  return make(std::move(value), "conv2d", std::move(ins), std::move(fn));
}

Var conv2d_backward_data(const Var& grad_out, const Var& weight,
                         const Shape& input_shape, kernels::ConvGeometry geo) {
  Tensor value = kernels::conv2d_backward_data(grad_out.value(), weight.value(),
                                               input_shape, geo);
  auto fn = [grad_out, weight, geo](const Var& u, const std::vector<bool>& need) {
    std::vector<Var> out(2);
    if (need[0]) out[0] = conv2d(u, weight, Var(), geo);
    if (need[1]) out[1] = conv2d_backward_filter(u, grad_out, weight.shape(), geo);
    return out;
  };
  return make(std::move(value), "conv2d_backward_data", {grad_out, weight},
              std::move(fn));
}

Var conv2d_backward_filter(const Var& input, const Var& grad_out,
                           const Shape& weight_shape, kernels::ConvGeometry geo) {
  Tensor value = kernels::conv2d_backward_filter(input.value(), grad_out.value(),
                                                 weight_shape, geo);
  auto fn = [input, grad_out, geo](const Var& u, const std::vector<bool>& need) {
    std::vector<Var> out(2);
    if (need[0]) out[0] = conv2d_backward_data(grad_out, u, input.shape(), geo);
    if (need[1]) out[1] = conv2d(input, u, Var(), geo);
    return out;
  };
  return make(std::move(value), "conv2d_backward_filter", {input, grad_out},
              std::move(fn));
}

Var leaky_relu(const Var& x, double slope) {
  if (!(slope >= 0.0 && slope < 1.0))
    throw Error("leaky_relu: slope must lie in [0, 1)");
  Tensor mask = map1(x.value(), [slope](auto v) { return v > 0 ? 1.0 : slope; });
  Tensor value = map2("leaky_relu", x.value(), mask,
                      [](auto a, auto m) { return a * m; });
  auto fn = [mask](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{mul(g, Var(mask))};
  };
  return make(std::move(value), "leaky_relu", {x}, std::move(fn));
}

Var add(const Var& a, const Var& b) {
  Tensor value = add_tensors(a.value(), b.value());
  auto fn = [](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{g, g};
  };
  return make(std::move(value), "add", {a, b}, std::move(fn));
}

Var sub(const Var& a, const Var& b) {
  Tensor value = map2("sub", a.value(), b.value(), [](auto x, auto y) { return x - y; });
  auto fn = [](const Var& g, const std::vector<bool>& need) {
    std::vector<Var> out(2);
    if (need[0]) out[0] = g;
    if (need[1]) out[1] = scale(g, -1.0);
    return out;
  };
  return make(std::move(value), "sub", {a, b}, std::move(fn));
}

Var mul(const Var& a, const Var& b) {
  Tensor value = map2("mul", a.value(), b.value(), [](auto x, auto y) { return x * y; });
  auto fn = [a, b](const Var& g, const std::vector<bool>& need) {
    std::vector<Var> out(2);
    if (need[0]) out[0] = mul(g, b);
    if (need[1]) out[1] = mul(g, a);
    return out;
  };
  return make(std::move(value), "mul", {a, b}, std::move(fn));
}

Var scale(const Var& a, double s) {
  Tensor value = map1(a.value(), [s](auto x) { return x * s; });
  auto fn = [s](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{scale(g, s)};
  };
  return make(std::move(value), "scale", {a}, std::move(fn));
}

Var add_scalar(const Var& a, double s) {
  Tensor value = map1(a.value(), [s](auto x) { return x + s; });
  auto fn = [](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{g};
  };
  return make(std::move(value), "add_scalar", {a}, std::move(fn));
}

Var square(const Var& a) { return mul(a, a); }

Var abs(const Var& a) {
  Tensor sign = map1(a.value(), [](auto v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
  Tensor value = map1(a.value(), [](auto v) { return std::abs(v); });
  auto fn = [sign](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{mul(g, Var(sign))};
  };
  return make(std::move(value), "abs", {a}, std::move(fn));
}

Var sqrt(const Var& a) {
  Tensor value = map1(a.value(), [](auto v) { return std::sqrt(v); });
  Tensor deriv = map1(value, [](auto r) { return 0.5 / r; });
  auto fn = [deriv](const Var& g, const std::vector<bool>&) {
    return std::vector<Var>{mul(g, Var(deriv))};
  };
  return make(std::move(value), "sqrt", {a}, std::move(fn));
}

Var sum(const Var& x) {
  const Shape s = x.shape();
  return linear_op(
      x, "sum",
      [](const Tensor& t) {
        const Tensor per = kernels::sample_sum(t);
        double total = 0.0;
        for (std::size_t i = 0; i < per.numel(); ++i) total += per.at(i);
        return Tensor::scalar(total, t.dtype());
      },
      [s](const Tensor& t) { return Tensor::full(s, t.item(), t.dtype()); });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().numel()));
}

Var sample_sum(const Var& x) {
  const Shape s = x.shape();
  return linear_op(
      x, "sample_sum", [](const Tensor& t) { return kernels::sample_sum(t); },
      [s](const Tensor& t) { return kernels::sample_broadcast(t, s); });
}

Var sample_mean(const Var& x) {
  const Shape s = x.shape();
  return scale(sample_sum(x), 1.0 / static_cast<double>(s.numel() / s.n));
}

Var slice_channels(const Var& x, int begin, int count) {
  const Shape s = x.shape();
  return linear_op(
      x, "slice_channels",
      [begin, count](const Tensor& t) { return kernels::slice_channels(t, begin, count); },
      [s, begin, count](const Tensor& t) {
        std::vector<Tensor> parts;
        if (begin > 0) parts.push_back(zeros_channels(s, begin, t.dtype()));
        parts.push_back(t);
        const int rest = s.c - begin - count;
        if (rest > 0) parts.push_back(zeros_channels(s, rest, t.dtype()));
        return kernels::concat_channels(parts);
      });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.size() == 1) return parts.front();
  std::vector<Tensor> values;
  std::vector<int> offsets;
  int c = 0;
  for (const Var& p : parts) {
    values.push_back(p.value());
    offsets.push_back(c);
    c += p.shape().c;
  }
  Tensor value = kernels::concat_channels(values);
  std::vector<int> widths;
  for (const Var& p : parts) widths.push_back(p.shape().c);
  auto fn = [offsets, widths](const Var& g, const std::vector<bool>& need) {
    std::vector<Var> out(offsets.size());
    for (std::size_t i = 0; i < offsets.size(); ++i)
      if (need[i]) out[i] = slice_channels(g, offsets[i], widths[i]);
    return out;
  };
  return make(std::move(value), "concat_channels", parts, std::move(fn));
}

Var crop(const Var& x, int top, int left, int h, int w) {
  const Shape s = x.shape();
  return linear_op(
      x, "crop",
      [=](const Tensor& t) { return kernels::crop(t, top, left, h, w); },
      [=](const Tensor& t) { return kernels::uncrop(t, s, top, left); });
}

Var mul_map(const Var& x, const Tensor& map) {
  return linear_op(
      x, "mul_map",
      [map](const Tensor& t) { return kernels::mul_channel_broadcast(t, map); },
      [map](const Tensor& t) { return kernels::mul_channel_broadcast(t, map); });
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Var(Graph&)>& f,
                           std::span<Parameter* const> params,
                           GradCheckOptions opts) {
  for (Parameter* p : params)
    if (p->value.dtype() != DType::F64)
      throw Error("grad_check: parameter " + p->name + " is not f64");

  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Var root = f(g);
    g.backward(root);
  }

  // Recording stays on: f may itself call input_gradient.
  auto evaluate = [&]() {
    Graph g;
    return f(g).value().item();
  };

  std::mt19937_64 rng(opts.seed);
  struct Probe {
    Parameter* p;
    std::size_t index;
  };
  std::vector<Probe> probes;
  for (Parameter* p : params) {
    const std::size_t n = p->value.numel();
    if (opts.sample_fraction >= 1.0) {
      for (std::size_t i = 0; i < n; ++i) probes.push_back({p, i});
      continue;
    }
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(opts.sample_fraction * n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      probes.push_back({p, idx[i]});
    }
  }

  std::vector<double> analytic(probes.size()), numeric(probes.size());
  double scale_max = 0.0;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    Parameter* p = probes[k].p;
    const std::size_t i = probes[k].index;
    analytic[k] = p->grad.at(i);
    scale_max = std::max(scale_max, std::abs(analytic[k]));
    auto values = p->value.data<double>();
    const double orig = values[i];
    values[i] = orig + opts.eps;
    const double up = evaluate();
    values[i] = orig - opts.eps;
    const double down = evaluate();
    values[i] = orig;
    numeric[k] = (up - down) / (2.0 * opts.eps);
  }

  GradCheckReport report;
  report.coords_checked = probes.size();
  const double floor = std::max(opts.floor_fraction * scale_max, 1e-300);
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const double diff = std::abs(analytic[k] - numeric[k]);
    const double denom =
        std::max({std::abs(analytic[k]), std::abs(numeric[k]), floor});
    const double rel = diff / denom;
    report.max_abs_error = std::max(report.max_abs_error, diff);
    if (report.worst_param.empty() || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = probes[k].p->name;
      report.worst_index = probes[k].index;
    }
  }
  return report;
}

}  // namespace stran::ag
