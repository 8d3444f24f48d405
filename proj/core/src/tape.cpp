#include "psae/tape.hpp"

namespace psae {

template <typename T>
Var Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::input(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.borrowed = &p.value;
  if (grad_enabled_) {
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    n.grad_sink = &p.grad;
    n.requires_grad = true;
  }
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::borrow(const Tensor<T>& value) {
  Node n;
  n.borrowed = &value;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (Var p : parents) {
      if (nodes_.at(p.id).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.borrowed ? *n.borrowed : n.owned;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad_sink) return *n.grad_sink;
  if (n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) {
  return grad_buffer(v);
}

template <typename T>
void Tape<T>::backward(Var root) {
  if (!grad_enabled_) throw Error("backward() on a tape recorded without gradients");
  if (value(root).size() != 1) {
    throw DimensionError("backward() root must be scalar, got " + shape_str(value(root).shape()));
  }
  // Fresh gradients for intermediate nodes; parameter sinks keep accumulating.
  for (auto& n : nodes_) {
    if (!n.grad_sink) n.grad = Tensor<T>();
  }
  grad_buffer(root)[0] += T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    if (n.grad.empty() && !n.grad_sink) continue;  // not reached from root
    n.backward(*this, n.grad_sink ? *n.grad_sink : n.grad);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace psae
