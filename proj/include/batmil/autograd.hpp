#pragma once

// Minimal tensor-level reverse-mode differentiation. A Tape records every
// primitive in execution order (which is a topological order); backward()
// walks it in reverse and accumulates parameter gradients into a GradMap.

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "batmil/tensor.hpp"

namespace batmil::ad {

/// Raised when backward reaches a primitive that was recorded without a
/// backward rule.
class UnsupportedOpError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// Gradients keyed by the address of the parameter tensor they belong to.
class GradMap {
 public:
  Tensor& at(const Tensor& param);
  const Tensor* find(const Tensor& param) const;
  void clear() { grads_.clear(); }
  bool empty() const { return grads_.empty(); }

 private:
  std::unordered_map<const Tensor*, Tensor> grads_;
};

class Tape;

/// Backward rule for node `self`; reads tape.grad(self) and accumulates into
/// the gradients of its inputs.
using BackwardFn = std::function<void(Tape& tape, std::size_t self)>;

class Tape {
 public:
  Var constant(Tensor value);
  /// Leaf bound to external parameter storage (not copied). The tensor must
  /// outlive the tape and must not be resized while the tape is alive.
  Var param(const Tensor& storage, bool trainable = true);

  /// Record a primitive. The node requires a gradient if any input does.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* name);

  /// Record a primitive without a backward rule. Backward through it throws.
  Var record_forward_only(Tensor value, std::vector<Var> inputs, const char* name);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::vector<Var>& inputs(std::size_t node) const { return nodes_.at(node).inputs; }

  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad(Var v);
  Tensor& grad(std::size_t node) { return grad(Var{node}); }
  /// nullptr when v does not require a gradient.
  Tensor* grad_if(Var v) { return requires_grad(v) ? &grad(v) : nullptr; }

  /// Reverse accumulation from a 1×1 loss. Parameter-leaf gradients are
  /// added into `out`.
  void backward(Var loss, GradMap& out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<Var> inputs;
    BackwardFn backward;
    const char* name = "";
  };
  std::deque<Node> nodes_;  // stable references across push_back
};

}  // namespace batmil::ad
