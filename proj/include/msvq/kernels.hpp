// SPDX-License-Identifier: Apache-2.0
//
// Plain (non-differentiable) tensor kernels. The autodiff ops in ops.hpp are
// thin wrappers that pair each of these with its adjoint.
#pragma once

#include "msvq/tensor.hpp"

namespace msvq::kernels {

// C = A·B, A: m×k, B: k×n.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// C = Aᵀ·B, A: k×m, B: k×n.
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// C = A·Bᵀ, A: m×k, B: n×k.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// Row i divided by max(‖row i‖₂, eps).
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps);

/// Row-wise softmax of logits/temperature with max subtraction.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature);

/// Row-wise log-softmax of logits/temperature.
template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits, T temperature);

/// Shannon entropy (nats) of each row of a row-stochastic matrix.
template <class T>
std::vector<T> row_entropy(const Tensor<T>& probs);

template <class T>
T mean_row_entropy(const Tensor<T>& probs);

}  // namespace msvq::kernels
