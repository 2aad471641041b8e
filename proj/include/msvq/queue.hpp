// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "msvq/rng.hpp"
#include "msvq/tensor.hpp"

namespace msvq {

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Which encoder/view produced a queue column. Kept for provenance checks only.
enum class QueueSource : std::uint8_t { Random = 0, Teacher1View2 = 1, Teacher2View4 = 2, External = 3 };

/// FIFO ring of Q unit-norm D-dimensional negatives, stored as a D×Q matrix.
/// Entries are plain tensors: no gradient can ever flow into the queue.
template <class T>
class NegativeQueue {
 public:
  /// Q random unit vectors drawn from an isotropic Gaussian.
  NegativeQueue(std::size_t capacity, std::size_t dim, SeededRng& rng);

  /// Rebuilds a queue from an oldest→newest D×Q snapshot.
  static NegativeQueue from_matrix(const Tensor<T>& ordered, std::vector<std::int32_t> labels = {});

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }

  /// Replaces the N oldest columns with the rows of z (N×D), oldest row first.
  /// labels, when given, are stored in lockstep (analysis mode only).
  void enqueue_dequeue(const Tensor<T>& z, const std::vector<std::int32_t>* labels = nullptr,
                       QueueSource source = QueueSource::External);

  /// D×Q snapshot, columns ordered oldest→newest.
  Tensor<T> as_matrix() const;
  /// Labels aligned with as_matrix() columns; −1 where unknown.
  std::vector<std::int32_t> labels() const;
  std::vector<QueueSource> sources() const;
  bool has_labels() const noexcept { return labelled_; }

 private:
  NegativeQueue(std::size_t capacity, std::size_t dim);

  std::size_t capacity_;
  std::size_t dim_;
  std::vector<T> storage_;  // column-major by slot: slot j occupies [j·D, (j+1)·D)
  std::size_t head_ = 0;    // slot holding the oldest column
  std::vector<std::int32_t> labels_;
  std::vector<QueueSource> sources_;
  bool labelled_ = false;
};

extern template class NegativeQueue<float>;
extern template class NegativeQueue<double>;

}  // namespace msvq
