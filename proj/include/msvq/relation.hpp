// SPDX-License-Identifier: Apache-2.0
//
// Relation distributions between embeddings and queued negatives, and the
// five objectives built from them. Teacher-side inputs are plain tensors, so
// the type system already guarantees they are detached.
//
// Naming: logitsAB = similarities of view A's embeddings against queue B.
//   logits11 = Z¹·Queue₁ (student)     logits12 = Z¹·Queue₂ (student)
//   logits21 = Z²·Queue₁ (teacher 1)   logits31 = Z³·Queue₁ (teacher 1)
//   logits42 = Z⁴·Queue₂ (teacher 2)
#pragma once

#include <string>

#include "msvq/tape.hpp"

namespace msvq {

enum class Method { MoCo, ReSSL, MSV, MQ, MSVQ };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Which of the methods consume the X³ view, and which the second queue.
bool uses_third_view(Method m);
bool uses_second_queue(Method m);

struct Temperatures {
  double student = 0.1;
  double teacher = 0.04;

  /// Both positive and teacher < student (the sharpened-target constraint).
  void validate() const;
};

enum class RelationSource { P11, P21, P31, P12, P42 };

template <class T>
struct RelationDistribution {
  Tensor<T> probs;  // N×Q, rows sum to 1
  RelationSource source;
};

/// Cosine similarities of unit rows of z (N×D) against unit columns of queue (D×Q).
template <class T>
Tensor<T> similarity_logits(const Tensor<T>& z, const Tensor<T>& queue);

template <class T>
Var<T> similarity_logits(const Var<T>& z, const Tensor<T>& queue);

/// softmax(logits/τ) over the Q queue entries; the positive is never included.
template <class T>
RelationDistribution<T> relation_distribution(const Tensor<T>& logits, double temperature,
                                              RelationSource source);

/// Mean entropy of softmax(logits/τ) rows, for logging KL = CE − H.
template <class T>
T teacher_entropy(const Tensor<T>& logits, double temperature);

/// InfoNCE with the positive appended as column Q+1 of the logits.
template <class T>
Var<T> loss_moco(const Var<T>& z1, const Tensor<T>& z2, const Tensor<T>& queue, double temperature);

/// CE(softmax(logits21/τ_t) ‖ softmax(logits11/τ_s)).
template <class T>
Var<T> loss_ressl(const Var<T>& logits11, const Tensor<T>& logits21, const Temperatures& temps);

/// ½[CE(P²¹‖P¹¹) + CE(P³¹‖P¹¹)].
template <class T>
Var<T> loss_msv(const Var<T>& logits11, const Tensor<T>& logits21, const Tensor<T>& logits31,
                const Temperatures& temps);

/// ½[CE(P²¹‖P¹¹) + CE(P⁴²‖P¹²)].
template <class T>
Var<T> loss_mq(const Var<T>& logits11, const Tensor<T>& logits21, const Var<T>& logits12,
               const Tensor<T>& logits42, const Temperatures& temps);

/// ⅓[CE(P²¹‖P¹¹) + CE(P³¹‖P¹¹) + CE(P⁴²‖P¹²)].
template <class T>
Var<T> loss_msvq(const Var<T>& logits11, const Var<T>& logits12, const Tensor<T>& logits21,
                 const Tensor<T>& logits31, const Tensor<T>& logits42, const Temperatures& temps);

}  // namespace msvq
