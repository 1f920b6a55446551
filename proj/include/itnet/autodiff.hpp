#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "itnet/tensor.hpp"

namespace itnet {

// A named trainable tensor. The gradient buffer always has the value's shape.
template <Real T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <Real T>
class Tape;

// Handle to a node recorded on a Tape.
template <Real T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode differentiation tape. Nodes are appended in evaluation order, so a
// reverse sweep over ids is a valid topological order. A tape supports exactly one
// backward pass.
template <Real T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), {}, nullptr, false, nullptr); }

  Var<T> leaf(Tensor<T> value) { return push(std::move(value), {}, nullptr, true, nullptr); }

  // Records the parameter's current value; backward() adds into parameter.grad.
  Var<T> parameter(Parameter<T>& p) { return push(p.value, {}, nullptr, true, &p); }

  Var<T> record(Tensor<T> value, std::vector<std::size_t> parents, Backward backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_.at(p).requires_grad;
    if (!needs) return push(std::move(value), {}, nullptr, false, nullptr);
    return push(std::move(value), std::move(parents), std::move(backward), true, nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient buffer of a node, allocated on first use; nullptr when the node
  // does not participate in differentiation.
  Tensor<T>* grad_sink(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  // Gradient arriving at a node during the reverse sweep (zeros if none arrived).
  const Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  const Tensor<T>& grad(const Var<T>& v) { return grad(v.id()); }

  void backward(const Var<T>& loss) {
    if (consumed_) throw std::logic_error("tape: backward already ran on this tape");
    if (loss.value().size() != 1) {
      throw std::invalid_argument("tape: backward needs a scalar loss, got shape " +
                                  shape_string(loss.shape()));
    }
    consumed_ = true;
    if (!nodes_.at(loss.id()).requires_grad) return;
    grad_sink(loss.id())->fill(T(1));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& dst = n.param->grad.values();
        const auto& src = n.grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, std::vector<std::size_t> parents, Backward backward, bool needs_grad,
              Parameter<T>* param) {
    if (consumed_) throw std::logic_error("tape: cannot record after backward");
    nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(backward), needs_grad, param});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace itnet
