// SPDX-License-Identifier: Apache-2.0
#include "msvq/queue.hpp"

#include <cmath>
#include <string>

namespace msvq {

template <class T>
NegativeQueue<T>::NegativeQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity),
      dim_(dim),
      storage_(capacity * dim, T(0)),
      labels_(capacity, -1),
      sources_(capacity, QueueSource::Random) {
  if (capacity == 0 || dim == 0) throw ParameterError("queue capacity and dim must be positive");
}

template <class T>
NegativeQueue<T>::NegativeQueue(std::size_t capacity, std::size_t dim, SeededRng& rng)
    : NegativeQueue(capacity, dim) {
  for (std::size_t j = 0; j < capacity; ++j) {
    T* col = storage_.data() + j * dim;
    double ss = 0.0;
    do {
      ss = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double v = rng.normal();
        col[i] = static_cast<T>(v);
        ss += v * v;
      }
    } while (ss == 0.0);
    const double norm = std::sqrt(ss);
    for (std::size_t i = 0; i < dim; ++i) col[i] = static_cast<T>(col[i] / norm);
  }
}

template <class T>
NegativeQueue<T> NegativeQueue<T>::from_matrix(const Tensor<T>& ordered, std::vector<std::int32_t> labels) {
  require_rank(ordered, 2, "NegativeQueue::from_matrix");
  NegativeQueue q(ordered.dim(1), ordered.dim(0));
  for (std::size_t j = 0; j < q.capacity_; ++j)
    for (std::size_t i = 0; i < q.dim_; ++i) q.storage_[j * q.dim_ + i] = ordered.at(i, j);
  if (!labels.empty()) {
    if (labels.size() != q.capacity_) throw ShapeError("queue labels must have one entry per column");
    q.labels_ = std::move(labels);
    q.labelled_ = true;
  }
  q.sources_.assign(q.capacity_, QueueSource::External);
  return q;
}

template <class T>
void NegativeQueue<T>::enqueue_dequeue(const Tensor<T>& z, const std::vector<std::int32_t>* labels,
                                       QueueSource source) {
  require_rank(z, 2, "enqueue_dequeue");
  const std::size_t n = z.dim(0);
  if (z.dim(1) != dim_) {
    throw ShapeError("enqueue_dequeue: batch " + shape_str(z.shape()) + " does not match queue dim " +
                     std::to_string(dim_));
  }
  if (n > capacity_) {
    throw CapacityError("enqueue of " + std::to_string(n) + " embeddings exceeds queue capacity " +
                        std::to_string(capacity_));
  }
  if (labels && labels->size() != n) throw ShapeError("enqueue_dequeue: one label per row required");
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t slot = (head_ + r) % capacity_;
    for (std::size_t i = 0; i < dim_; ++i) storage_[slot * dim_ + i] = z.at(r, i);
    labels_[slot] = labels ? (*labels)[r] : -1;
    sources_[slot] = source;
  }
  if (labels) labelled_ = true;
  head_ = (head_ + n) % capacity_;
}

template <class T>
Tensor<T> NegativeQueue<T>::as_matrix() const {
  Tensor<T> out({dim_, capacity_});
  for (std::size_t j = 0; j < capacity_; ++j) {
    const std::size_t slot = (head_ + j) % capacity_;
    for (std::size_t i = 0; i < dim_; ++i) out.at(i, j) = storage_[slot * dim_ + i];
  }
  return out;
}

template <class T>
std::vector<std::int32_t> NegativeQueue<T>::labels() const {
  std::vector<std::int32_t> out(capacity_);
  for (std::size_t j = 0; j < capacity_; ++j) out[j] = labels_[(head_ + j) % capacity_];
  return out;
}

template <class T>
std::vector<QueueSource> NegativeQueue<T>::sources() const {
  std::vector<QueueSource> out(capacity_);
  for (std::size_t j = 0; j < capacity_; ++j) out[j] = sources_[(head_ + j) % capacity_];
  return out;
}

template class NegativeQueue<float>;
template class NegativeQueue<double>;

}  // namespace msvq
