#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dscale/core/tensor.hpp"

namespace dscale {

/// Trainable tensor with its accumulated gradient.
///
/// Names are path-style ("encoder.block0.attn.qkv.weight") and must be unique
/// within a model. decay marks participation in weight decay.
template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  bool decay = true;

  Parameter(std::string n, Shape shape, bool decay_flag = true)
      : name(std::move(n)), value(shape), grad(shape), decay(decay_flag) {}

  std::size_t numel() const { return value.numel(); }
  void zero_grad() { grad.set_zero(); }
};

template <class S>
class Tape;

/// Handle to a tape node; only meaningful with the tape that produced it.
template <class S>
struct Var {
  std::int32_t id = -1;
};

/// Records executed operations for reverse-mode differentiation.
///
/// One tape per forward pass. Each recorded node stores its output value and
/// a pull function that routes the node's output gradient to its inputs via
/// add_grad. backward() walks nodes in reverse execution order, then adds the
/// leaf gradients into Parameter::grad, so repeated backward calls accumulate.
template <class S>
class Tape {
 public:
  /// Receives the tape, the node's output gradient, and the node's own value.
  using PullFn = std::function<void(Tape&, const Tensor<S>&, const Tensor<S>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Constant leaf; never receives gradient.
  Var<S> input(Tensor<S> value) { return push(std::move(value), false, nullptr); }

  /// Differentiable leaf. Watching the same parameter twice returns the same
  /// node, so a value snapshot is taken once per tape.
  Var<S> param(Parameter<S>& p) {
    auto it = watched_.find(&p);
    if (it != watched_.end()) return Var<S>{it->second};
    Var<S> v = push(p.value, recording_, nullptr);
    if (recording_) {
      watched_.emplace(&p, v.id);
      leaves_.emplace_back(&p, v.id);
    }
    return v;
  }

  const Tensor<S>& val(Var<S> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }

  /// True when any of the given inputs requires gradient on this tape.
  bool needs(std::initializer_list<Var<S>> inputs) const {
    if (!recording_) return false;
    for (Var<S> in : inputs) {
      if (in.id >= 0 && nodes_[static_cast<std::size_t>(in.id)].needs_grad) return true;
    }
    return false;
  }

  /// Record a computed node. Pass needs_grad from needs(); fn may be empty
  /// when no input requires gradient.
  Var<S> emit(Tensor<S> value, bool needs_grad, PullFn fn = nullptr) {
    return push(std::move(value), needs_grad && recording_, std::move(fn));
  }

  /// Accumulate a gradient contribution into a node (no-op for non-grad nodes).
  void add_grad(Var<S> v, const Tensor<S>& g) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.needs_grad) return;
    if (!n.grad.allocated()) n.grad = Tensor<S>(n.value.shape());
    n.grad.array() += g.array();
  }

  /// Gradient buffer for in-place accumulation; nullptr when not needed.
  Tensor<S>* grad_buffer(Var<S> v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.needs_grad) return nullptr;
    if (!n.grad.allocated()) n.grad = Tensor<S>(n.value.shape());
    return &n.grad;
  }

  /// Reverse pass from a scalar loss. Accumulates into Parameter::grad.
  void backward(Var<S> loss) {
    if (!recording_) throw ConfigError("backward: tape is not recording");
    const Node& top = nodes_.at(static_cast<std::size_t>(loss.id));
    if (top.value.numel() != 1) {
      throw DimensionError("backward: loss must be scalar, got shape " +
                           shape_str(top.value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor<S>();
    if (!top.needs_grad) return;

    nodes_[static_cast<std::size_t>(loss.id)].grad = Tensor<S>::full(top.value.shape(), S(1));
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.pull && n.grad.allocated()) n.pull(*this, n.grad, n.value);
    }
    for (auto& [p, id] : leaves_) {
      const Tensor<S>& g = nodes_[static_cast<std::size_t>(id)].grad;
      if (g.allocated()) p->grad.array() += g.array();
    }
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    PullFn pull;
  };

  Var<S> push(Tensor<S> value, bool needs_grad, PullFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<S>(), needs_grad, std::move(fn)});
    return Var<S>{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<Parameter<S>*, std::int32_t> watched_;
  std::vector<std::pair<Parameter<S>*, std::int32_t>> leaves_;
};

}  // namespace dscale
