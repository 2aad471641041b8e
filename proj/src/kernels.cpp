// SPDX-License-Identifier: Apache-2.0
#include "msvq/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace msvq::kernels {

namespace {

template <class T>
void check_rank2(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError(std::string(what) + ": operands must be matrices, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
}

template <class T>
[[noreturn]] void mismatch(const char* what, const Tensor<T>& a, const Tensor<T>& b) {
  throw ShapeError(std::string(what) + ": inner dimensions disagree for " + shape_str(a.shape()) +
                   " and " + shape_str(b.shape()));
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank2(a, b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul", a, b);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T(0)) continue;
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank2(a, b, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul_tn", a, b);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = pa + p * m;
    const T* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank2(a, b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) mismatch("matmul_nt", a, b);
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * k;
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * n + j] = s;
    }
  }
  return c;
}

template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps) {
  require_rank(x, 2, "l2_normalize_rows");
  Tensor<T> out = x;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto r = out.row(i);
    T ss = 0;
    for (T v : r) ss += v * v;
    const T denom = std::max(std::sqrt(ss), eps);
    for (T& v : r) v /= denom;
  }
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits, T temperature) {
  if (!(temperature > T(0))) {
    throw ParameterError("softmax temperature must be positive, got " + std::to_string(temperature));
  }
  require_rank(logits, 2, "softmax_rows");
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    auto in = logits.row(i);
    auto o = out.row(i);
    T mx = in[0];
    for (T v : in) mx = std::max(mx, v);
    T s = 0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = (in[j] - mx) / temperature;
      s += std::exp(o[j]);
    }
    const T lse = std::log(s);
    for (T& v : o) v -= lse;
  }
  return out;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature) {
  Tensor<T> out = log_softmax_rows(logits, temperature);
  for (T& v : out.data()) v = std::exp(v);
  return out;
}

template <class T>
std::vector<T> row_entropy(const Tensor<T>& probs) {
  require_rank(probs, 2, "row_entropy");
  std::vector<T> h(probs.dim(0), T(0));
  for (std::size_t i = 0; i < probs.dim(0); ++i)
    for (T p : probs.row(i))
      if (p > T(0)) h[i] -= p * std::log(p);
  return h;
}

template <class T>
T mean_row_entropy(const Tensor<T>& probs) {
  const auto h = row_entropy(probs);
  T s = 0;
  for (T v : h) s += v;
  return h.empty() ? T(0) : s / static_cast<T>(h.size());
}

#define MSVQ_INSTANTIATE(T)                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> l2_normalize_rows(const Tensor<T>&, T);                 \
  template Tensor<T> softmax_rows(const Tensor<T>&, T);                      \
  template Tensor<T> log_softmax_rows(const Tensor<T>&, T);                  \
  template std::vector<T> row_entropy(const Tensor<T>&);                     \
  template T mean_row_entropy(const Tensor<T>&);

MSVQ_INSTANTIATE(float)
MSVQ_INSTANTIATE(double)
#undef MSVQ_INSTANTIATE

}  // namespace msvq::kernels
