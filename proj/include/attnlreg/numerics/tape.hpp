#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "attnlreg/numerics/array.hpp"

namespace alr {

template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;

  Parameter() = default;
  Parameter(std::string n, Array<T> v) : name(std::move(n)), value(std::move(v)), grad(Array<T>::zeros_like(value)) {}

  void zero_grad() { grad = Array<T>::zeros_like(value); }
};

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Records the values produced by differentiable ops and their adjoint
/// closures. `backward` replays the closures in reverse and accumulates the
/// result into every Parameter bound with `leaf`.
///
/// With recording disabled the tape still stores values (ops read them) but
/// drops the closures; that is the inference mode used by analysis sweeps.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Array<T> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, {}, nullptr, false});
    return Var{nodes_.size() - 1};
  }

  // Binds a parameter without copying it; the parameter must outlive the tape.
  Var leaf(Parameter<T>& param) {
    nodes_.push_back(Node{{}, {}, &param.value, {}, record_ ? &param : nullptr, record_});
    return Var{nodes_.size() - 1};
  }

  // Inference-only parameter binding.
  Var leaf(const Parameter<T>& param) {
    nodes_.push_back(Node{{}, {}, &param.value, {}, nullptr, false});
    return Var{nodes_.size() - 1};
  }

  // Used by ops: record an output value and, when any input needs a
  // gradient, the closure that propagates into those inputs.
  Var emit(Array<T> value, bool needs_grad, Backward fn) {
    const bool keep = record_ && needs_grad;
    nodes_.push_back(Node{std::move(value), {}, nullptr, keep ? std::move(fn) : Backward{}, nullptr, keep});
    return Var{nodes_.size() - 1};
  }

  const Array<T>& value(Var v) const {
    const Node& n = node(v);
    return n.ref != nullptr ? *n.ref : n.value;
  }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  // Adjoint buffer for `v`, allocated as zeros on first access.
  Array<T>& grad(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Array<T>::zeros_like(n.ref != nullptr ? *n.ref : n.value);
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  /// Reverse-mode sweep from a scalar. Node adjoints are reset first, so a
  /// second call on the same tape adds the same contribution to the
  /// parameters again (parameter grads accumulate until zero_grad).
  void backward(Var loss, T seed = T{1}) {
    if (nodes_.empty() || !loss.valid()) throw StateError("backward called before any forward pass");
    if (!record_) throw StateError("backward called on a tape that is not recording");
    if (value(loss).size() != 1) {
      throw InvalidArgument("backward expects a scalar loss, got dims " + dims_to_string(value(loss).dims()));
    }
    for (Node& n : nodes_) n.grad = Array<T>{};
    grad(loss)[0] = seed;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, Var{i});
      if (n.param != nullptr) n.param->grad += nodes_[i].grad;
    }
  }

 private:
  struct Node {
    Array<T> value;
    Array<T> grad;
    const Array<T>* ref;
    Backward backward;
    Parameter<T>* param;
    bool needs_grad;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this tape");
    return nodes_[v.id];
  }
  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this tape");
    return nodes_[v.id];
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace alr
