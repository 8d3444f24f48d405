#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "psae/tensor.hpp"

namespace psae {

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Operation tape for first-order reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so a reverse sweep over the tape is
/// a valid topological order. Parameter nodes borrow the Parameter's storage
/// and accumulate their gradient into Parameter::grad during backward().
/// A Parameter must outlive every tape that references it.
template <typename T>
class Tape {
 public:
  /// Called with the tape and the node's output gradient; adds into parent gradients.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value);
  /// Leaf whose gradient is kept on the tape (for probing input gradients).
  Var input(Tensor<T> value);
  Var parameter(Parameter<T>& p);
  /// Non-differentiable leaf that refers to `value` without copying; `value` must outlive the tape.
  Var borrow(const Tensor<T>& value);

  /// Records an op result. The backward function is dropped when no parent needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() root with respect to v (zeros if v was not reached).
  const Tensor<T>& grad(Var v);

  /// Mutable gradient accumulator for op authors; allocated on first use.
  Tensor<T>& grad_buffer(Var v);

  /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must hold one value.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* borrowed = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace psae
