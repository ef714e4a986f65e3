#pragma once

#include <span>
#include <vector>

#include "slw/numerics/tensor.hpp"

namespace slw {

/// One SGD-with-momentum update: v <- momentum * v + g; p <- p - lr * v.
template <class T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity, T lr,
              T momentum) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw ShapeError("sgd_step: params, grads and velocity must have equal length");
  }
  if (!(lr >= T{0})) throw Error("sgd_step: learning rate must be non-negative");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

/// Momentum SGD over a ParamStore, reading each tensor's grad buffer.
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(T lr, T momentum) : lr_(lr), momentum_(momentum) {}

  void step(ParamStore<T>& params) {
    if (velocity_.empty()) {
      for (const auto& e : params) velocity_.emplace_back(e.second.size(), T{0});
    }
    if (velocity_.size() != params.size()) throw Error("SgdMomentum: parameter set changed");
    std::size_t i = 0;
    for (auto& e : params) {
      auto& t = e.second;
      if (!t.has_grad()) throw Error("SgdMomentum: parameter without gradient: " + e.first);
      sgd_step<T>(t.data(), t.grad(), velocity_[i++], lr_, momentum_);
    }
  }

  T lr() const noexcept { return lr_; }
  void set_lr(T lr) {
    if (!(lr >= T{0})) throw Error("SgdMomentum: learning rate must be non-negative");
    lr_ = lr;
  }

 private:
  T lr_;
  T momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace slw
