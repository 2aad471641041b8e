// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation. A Tape owns every value produced while
// building one loss graph; Var is a cheap handle into it. Ops that have no
// gradient-carrying input are evaluated but not recorded, so anything
// downstream of detach() or constant() never reaches the backward pass.
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "msvq/tensor.hpp"

namespace msvq {

/// Trainable parameter: value plus accumulated gradient of the same shape.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  /// Gradient accumulated by the last backward(); zeros if none reached this value.
  Tensor<T> grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Adjoint of one recorded op: reads grad(out) and accumulates into its inputs.
  using Backward = std::function<void(Tape&, std::size_t out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value);
  /// Leaf bound to a Parameter; backward() adds its gradient into p.grad.
  Var<T> param(Parameter<T>& p);
  Var<T> detach(const Var<T>& v);

  /// Adds an op result. Recorded only if some input requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward,
                const char* name);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  Tensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad_allocated; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Propagates d(loss)/d(·) through every recorded op in reverse order.
  void backward(const Var<T>& loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t op_count() const noexcept { return ops_.size(); }
  std::size_t backward_passes() const noexcept { return backward_passes_; }
  /// Op indices visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_traversal() const noexcept { return last_traversal_; }
  std::vector<std::string> op_names() const;

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool grad_allocated = false;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };
  struct Op {
    std::size_t output;
    Backward backward;
    const char* name;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Parameter<T>* param);

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Op> ops_;
  std::size_t backward_passes_ = 0;
  std::vector<std::size_t> last_traversal_;
};

extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace msvq
