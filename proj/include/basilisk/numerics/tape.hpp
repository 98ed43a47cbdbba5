#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records one node per operation in creation order. Each node owns its
// value (or references a Parameter's value), a lazily allocated gradient
// buffer and a backward closure. backward() walks the nodes in reverse and
// finally adds leaf gradients into the referenced Parameters.
//
// A tape belongs to one thread and one step; build a fresh tape per forward.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "basilisk/numerics/tensor.hpp"

namespace basilisk {

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  /// False for biases and normalization weights (excluded from weight decay).
  bool decay = true;

  void zero_grad() {
    if (grad.size() != value.size())
      grad = Tensor<S>(value.shape());
    else
      grad.fill(S{0});
  }
};

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<S>& value() const { return tape->value(id); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<S>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Tensor<S> value) { return push(std::move(value), false, {}); }

  /// Leaf whose gradient is readable through grad() after backward().
  Var<S> watch(Tensor<S> value) { return push(std::move(value), true, {}); }

  /// Leaf bound to a parameter; repeated calls return the same node.
  Var<S> parameter(Parameter<S>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.ref = &p.value;
    n.needs = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  Var<S> record(Tensor<S> value, std::initializer_list<Var<S>> parents, Backward fn) {
    bool needs = false;
    for (const auto& v : parents) needs = needs || nodes_[v.id].needs;
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  Var<S> record(Tensor<S> value, const std::vector<Var<S>>& parents, Backward fn) {
    bool needs = false;
    for (const auto& v : parents) needs = needs || nodes_[v.id].needs;
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const Tensor<S>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs; }
  bool needs_grad(Var<S> v) const { return nodes_[v.id].needs; }

  /// Gradient accumulator for a node, zero-initialized on first use.
  Tensor<S>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<S>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<S>& g) {
    if (!nodes_[id].needs) return;
    Tensor<S>& buf = grad_buffer(id);
    const S* src = g.data();
    S* dst = buf.data();
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
  }

  /// Reverse sweep from a scalar loss; leaf gradients are added into the
  /// bound parameters unless accumulate_params is false.
  void backward(Var<S> loss, S seed = S{1}, bool accumulate_params = true) {
    if (loss.value().size() != 1) throw ShapeError("backward: loss must be a scalar");
    grad_buffer(loss.id).fill(seed);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
      n.backward = nullptr;
    }
    if (!accumulate_params) return;
    for (auto& [param, id] : param_nodes_) {
      Node& n = nodes_[id];
      if (!n.has_grad) continue;
      if (param->grad.size() != param->value.size()) param->grad = Tensor<S>(param->value.shape());
      param->grad += n.grad;
    }
  }

  /// Gradient of the last backward() with respect to a node (zeros if unreached).
  Tensor<S> grad(Var<S> v) const {
    const Node& n = nodes_[v.id];
    return n.has_grad ? n.grad : Tensor<S>(value(v.id).shape());
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> owned;
    const Tensor<S>* ref = nullptr;
    Tensor<S> grad;
    bool has_grad = false;
    bool needs = false;
    Backward backward;
    Parameter<S>* param = nullptr;
  };

  Var<S> push(Tensor<S> value, bool needs, Backward fn) {
    Node n;
    n.owned = std::move(value);
    n.needs = needs;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter<S>*, std::size_t> param_nodes_;
};

}  // namespace basilisk
