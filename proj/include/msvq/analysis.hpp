// SPDX-License-Identifier: Apache-2.0
//
// False-negative counting over teacher soft labels, and embedding export.
// A false negative is a queued negative whose class matches the positive's.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "msvq/evalkit.hpp"
#include "msvq/relation.hpp"
#include "msvq/trainer.hpp"

namespace msvq {

/// The three teacher distributions of one batch plus the labels needed to score them.
struct SoftLabelSnapshot {
  Tensor<double> p21;  // N×Q over Queue₁
  Tensor<double> p31;  // N×Q over Queue₁
  Tensor<double> p42;  // N×Q over Queue₂
  std::vector<std::int32_t> queue1_labels;
  std::vector<std::int32_t> queue2_labels;
  std::vector<std::int32_t> positive_labels;

  /// Shapes agree, label arrays have length Q, rows sum to 1 within 1e-6.
  void validate() const;
};

/// Indices of the k largest entries of a row; ties go to the lower index.
std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k);

/// Mean over rows of |{j in top-k(row) : queue_labels[j] == positive_labels[row]}|.
double false_negatives_topk(const Tensor<double>& probs, const std::vector<std::int32_t>& queue_labels,
                            const std::vector<std::int32_t>& positive_labels, std::size_t k = 5);

/// Mean over rows of the size of the union of the three per-label false-negative
/// sets. P²¹ and P³¹ hits are merged by Queue₁ index; P⁴² hits come from a
/// different queue and are always counted as distinct.
double false_negatives_union(const SoftLabelSnapshot& snapshot, std::size_t k = 5);

struct FalseNegativeReport {
  std::size_t step = 0;
  double fn_top5_P21 = 0.0;
  double fn_top5_P31 = 0.0;
  double fn_top5_P42 = 0.0;
  double fn_top5_all = 0.0;
};

nlohmann::json to_json(const FalseNegativeReport& r);

/// All four counts for one snapshot.
FalseNegativeReport count_false_negatives(const SoftLabelSnapshot& snapshot, std::size_t k = 5);

/// Teacher soft labels (at the teacher temperature) for one batch against the
/// current queues, built from three weak views.
template <class T>
SoftLabelSnapshot make_snapshot(const TrainState<T>& state, const ImageBatch& raw,
                                const std::vector<std::int32_t>& labels, const SeededRng& rng);

/// Replays the dataset through the teachers without any gradient step: labelled
/// teacher embeddings first refill both queues (⌈Q/N⌉ batches), then one pass
/// over the data is scored batch by batch. The state's queues are overwritten.
template <class T>
FalseNegativeReport analyze_false_negatives(TrainState<T>& state, const LabeledImageDataset& data,
                                            std::size_t k = 5);

/// CSV with header "label,f0,...,f{D-1}" and one row per sample, 9 significant digits.
void export_embeddings(const FeatureBank& bank, const std::filesystem::path& path);

}  // namespace msvq
