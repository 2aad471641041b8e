// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops over Tape values. Only the set needed by the encoders,
// projector and relation losses is provided.
#pragma once

#include <vector>

#include "msvq/tape.hpp"

namespace msvq::ops {

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// x: n×d, bias: d (or 1×d); adds bias to every row.
template <class T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias);

template <class T>
Var<T> scale(const Var<T>& x, T s);

template <class T>
Var<T> relu(const Var<T>& x);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <class T>
Var<T> l2_normalize_rows(const Var<T>& x, T eps = T(1e-12));

template <class T>
Var<T> softmax_rows(const Var<T>& logits, T temperature);

/// Mean over rows of −Σⱼ target[i,j]·log softmax(logits/τ)[i,j]. The target is
/// a plain tensor, so no gradient can reach whatever produced it.
template <class T>
Var<T> soft_cross_entropy(const Var<T>& logits, const Tensor<T>& target, T temperature);

template <class T>
Var<T> sum(const Var<T>& x);

template <class T>
Var<T> mean(const Var<T>& x);

/// Σₖ coeffs[k]·terms[k] over scalar terms.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& coeffs);

/// out[i] = ⟨a[i,:], b[i,:]⟩ as an n×1 column.
template <class T>
Var<T> row_dot(const Var<T>& a, const Var<T>& b);

/// [a | b] along columns; a: n×p, b: n×q.
template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b);

/// Stride-1 convolution. x: N×C×H×W, weight: OC×(C·k·k), bias: OC.
/// Output N×OC×(H+2·pad−k+1)×(W+2·pad−k+1).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t kernel,
              std::size_t pad);

/// 2×2 max pooling with stride 2 (floor mode).
template <class T>
Var<T> max_pool2(const Var<T>& x);

/// Per-channel standardisation with batch statistics (over N, or N·H·W for
/// images); no learned scale or shift.
template <class T>
Var<T> batch_norm(const Var<T>& x, T eps = T(1e-5));

/// N×C×H×W → N×C spatial mean.
template <class T>
Var<T> global_avg_pool(const Var<T>& x);

}  // namespace msvq::ops
