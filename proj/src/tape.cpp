// SPDX-License-Identifier: Apache-2.0
#include "msvq/tape.hpp"

#include <algorithm>

namespace msvq {

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
Tensor<T> Var<T>::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad(id_);
  return Tensor<T>(value().shape());
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->needs_grad(id_);
}

template <class T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, Parameter<T>* param) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.param = param;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr);
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  return push(std::move(value), recording_, nullptr);
}

template <class T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  return push(p.value, recording_, recording_ ? &p : nullptr);
}

template <class T>
Var<T> Tape<T>::detach(const Var<T>& v) {
  return push(v.value(), false, nullptr);
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward,
                       const char* name) {
  bool any = false;
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw UsageError(std::string(name) + ": input belongs to another tape");
    any = any || nodes_[in.id_].requires_grad;
  }
  const bool rec = recording_ && any;
  Var<T> out = push(std::move(value), rec, nullptr);
  if (rec) ops_.push_back(Op{out.id_, std::move(backward), name});
  return out;
}

template <class T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.grad_allocated) {
    n.grad = Tensor<T>(n.value.shape());
    n.grad_allocated = true;
  }
  return n.grad;
}

template <class T>
void Tape<T>::backward(const Var<T>& loss) {
  if (loss.tape_ != this) throw UsageError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  ++backward_passes_;
  last_traversal_.clear();
  for (auto& n : nodes_) {
    if (n.grad_allocated) n.grad.fill(T(0));
  }
  if (!nodes_[loss.id_].requires_grad) return;
  grad(loss.id_)[0] = T(1);
  for (std::size_t k = ops_.size(); k-- > 0;) {
    const Op& op = ops_[k];
    if (op.output > loss.id_ || !nodes_[op.output].grad_allocated) continue;
    last_traversal_.push_back(k);
    op.backward(*this, op.output);
  }
  for (auto& n : nodes_) {
    if (n.param && n.grad_allocated) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

template <class T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& op : ops_) names.emplace_back(op.name);
  return names;
}

template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace msvq
