// SPDX-License-Identifier: Apache-2.0
#include "msvq/relation.hpp"

#include "msvq/kernels.hpp"
#include "msvq/ops.hpp"

namespace msvq {

std::string to_string(Method m) {
  switch (m) {
    case Method::MoCo: return "moco";
    case Method::ReSSL: return "ressl";
    case Method::MSV: return "msv";
    case Method::MQ: return "mq";
    case Method::MSVQ: return "msvq";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "moco") return Method::MoCo;
  if (s == "ressl") return Method::ReSSL;
  if (s == "msv") return Method::MSV;
  if (s == "mq") return Method::MQ;
  if (s == "msvq") return Method::MSVQ;
  throw ParameterError("unknown method '" + s + "' (expected moco, ressl, msv, mq or msvq)");
}

bool uses_third_view(Method m) { return m == Method::MSV || m == Method::MSVQ; }
bool uses_second_queue(Method m) { return m == Method::MQ || m == Method::MSVQ; }

void Temperatures::validate() const {
  if (!(student > 0.0) || !(teacher > 0.0)) throw ParameterError("temperatures must be positive");
  if (!(teacher < student)) {
    throw ParameterError("teacher temperature (" + std::to_string(teacher) +
                         ") must be strictly below student temperature (" + std::to_string(student) +
                         ") so teacher targets are sharper");
  }
}

template <class T>
Tensor<T> similarity_logits(const Tensor<T>& z, const Tensor<T>& queue) {
  return kernels::matmul(z, queue);
}

template <class T>
Var<T> similarity_logits(const Var<T>& z, const Tensor<T>& queue) {
  return ops::matmul(z, z.tape().constant(queue));
}

template <class T>
RelationDistribution<T> relation_distribution(const Tensor<T>& logits, double temperature,
                                              RelationSource source) {
  return {kernels::softmax_rows(logits, static_cast<T>(temperature)), source};
}

template <class T>
T teacher_entropy(const Tensor<T>& logits, double temperature) {
  return kernels::mean_row_entropy(kernels::softmax_rows(logits, static_cast<T>(temperature)));
}

template <class T>
Var<T> loss_moco(const Var<T>& z1, const Tensor<T>& z2, const Tensor<T>& queue, double temperature) {
  if (z1.shape() != z2.shape()) {
    throw ShapeError("loss_moco: views " + shape_str(z1.shape()) + " and " + shape_str(z2.shape()));
  }
  Tape<T>& tape = z1.tape();
  Var<T> negatives = similarity_logits(z1, queue);
  Var<T> positive = ops::row_dot(z1, tape.constant(z2));
  Var<T> logits = ops::concat_cols(negatives, positive);
  const std::size_t n = logits.value().dim(0), cols = logits.value().dim(1);
  Tensor<T> target({n, cols});
  for (std::size_t i = 0; i < n; ++i) target.at(i, cols - 1) = T(1);
  return ops::soft_cross_entropy(logits, target, static_cast<T>(temperature));
}

namespace {

template <class T>
Var<T> distill(const Var<T>& student_logits, const Tensor<T>& teacher_logits, const Temperatures& t) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("relation loss: student logits " + shape_str(student_logits.shape()) +
                     " vs teacher logits " + shape_str(teacher_logits.shape()));
  }
  const Tensor<T> target = kernels::softmax_rows(teacher_logits, static_cast<T>(t.teacher));
  return ops::soft_cross_entropy(student_logits, target, static_cast<T>(t.student));
}

}  // namespace

template <class T>
Var<T> loss_ressl(const Var<T>& logits11, const Tensor<T>& logits21, const Temperatures& temps) {
  return distill(logits11, logits21, temps);
}

template <class T>
Var<T> loss_msv(const Var<T>& logits11, const Tensor<T>& logits21, const Tensor<T>& logits31,
                const Temperatures& temps) {
  return ops::weighted_sum<T>({distill(logits11, logits21, temps), distill(logits11, logits31, temps)},
                              {T(0.5), T(0.5)});
}

template <class T>
Var<T> loss_mq(const Var<T>& logits11, const Tensor<T>& logits21, const Var<T>& logits12,
               const Tensor<T>& logits42, const Temperatures& temps) {
  return ops::weighted_sum<T>({distill(logits11, logits21, temps), distill(logits12, logits42, temps)},
                              {T(0.5), T(0.5)});
}

template <class T>
Var<T> loss_msvq(const Var<T>& logits11, const Var<T>& logits12, const Tensor<T>& logits21,
                 const Tensor<T>& logits31, const Tensor<T>& logits42, const Temperatures& temps) {
  const T third = T(1) / T(3);
  return ops::weighted_sum<T>({distill(logits11, logits21, temps), distill(logits11, logits31, temps),
                               distill(logits12, logits42, temps)},
                              {third, third, third});
}

#define MSVQ_INSTANTIATE(T)                                                                        \
  template Tensor<T> similarity_logits(const Tensor<T>&, const Tensor<T>&);                        \
  template Var<T> similarity_logits(const Var<T>&, const Tensor<T>&);                              \
  template RelationDistribution<T> relation_distribution(const Tensor<T>&, double, RelationSource); \
  template T teacher_entropy(const Tensor<T>&, double);                                            \
  template Var<T> loss_moco(const Var<T>&, const Tensor<T>&, const Tensor<T>&, double);            \
  template Var<T> loss_ressl(const Var<T>&, const Tensor<T>&, const Temperatures&);                \
  template Var<T> loss_msv(const Var<T>&, const Tensor<T>&, const Tensor<T>&, const Temperatures&); \
  template Var<T> loss_mq(const Var<T>&, const Tensor<T>&, const Var<T>&, const Tensor<T>&,        \
                          const Temperatures&);                                                    \
  template Var<T> loss_msvq(const Var<T>&, const Var<T>&, const Tensor<T>&, const Tensor<T>&,      \
                            const Tensor<T>&, const Temperatures&);

MSVQ_INSTANTIATE(float)
MSVQ_INSTANTIATE(double)
#undef MSVQ_INSTANTIATE

}  // namespace msvq
