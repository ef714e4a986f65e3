#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "slw/numerics/tensor.hpp"

namespace slw {

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  Conv2d,
  MaxPool2,
  Dense,
  LeakyRelu,
  Sigmoid,
  Softmax,
  Add,
  Sub,
  Mul,
  Scale,
  Square,
  Sqrt,
  Sum,
  Mean,
  Concat,
  Slice,
  Reshape,
  CrossEntropy,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool2: return "maxpool2";
    case OpKind::Dense: return "dense";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction. Parameter nodes alias an external Tensor; their
/// gradients are accumulated into that tensor's grad buffer by backward(),
/// but only if the tensor has grad enabled. Constants never receive gradients.
///
/// A Tape is single-use and confined to one thread.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    const Tensor<T>* bound = nullptr;
    Tensor<T>* sink = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward_fn;
  };

  Var constant(Tensor<T> value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var parameter(Tensor<T>& param) {
    Node n;
    n.kind = OpKind::Parameter;
    n.bound = &param;
    n.sink = &param;
    n.requires_grad = param.has_grad();
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Read-only view of an external tensor; never receives a gradient.
  Var constant_ref(const Tensor<T>& t) {
    Node n;
    n.kind = OpKind::Constant;
    n.bound = &t;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return value(v.id); }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.bound ? *n.bound : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() loss with respect to v (empty if untouched).
  std::span<const T> grad(Var v) const { return nodes_.at(v.id).grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  /// Appends an op node. `fn` is dropped when no input needs a gradient.
  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value, BackwardFn fn) {
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    for (std::size_t in : n.inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) n.backward_fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool any_requires_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars) {
      if (nodes_.at(v.id).requires_grad) return true;
    }
    return false;
  }

  /// Output gradient of node `id` during backward.
  std::span<const T> out_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Input gradient buffer, zero-initialised on first use. Returns nullptr for
  /// nodes that do not need a gradient so ops can skip that work.
  T* in_grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
    return n.grad.data();
  }

  void backward(Var loss) {
    if (loss.id >= nodes_.size()) throw Error("backward: unknown loss node");
    if (value(loss).size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_string(value(loss).shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    Node& root = nodes_[loss.id];
    if (!root.requires_grad) return;
    root.grad.assign(1, T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.sink) {
        if (n.sink->has_grad()) {
          auto g = n.sink->grad();
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
        }
      } else if (n.backward_fn) {
        n.backward_fn(*this, i);
      }
    }
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace slw
