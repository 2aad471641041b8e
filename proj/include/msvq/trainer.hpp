// SPDX-License-Identifier: Apache-2.0
//
// One training step: four augmented views, student forward, three detached
// teacher forwards, the configured objective, a single backward pass, SGD on
// the student, EMA on the teachers, then FIFO queue updates.
#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "msvq/augment.hpp"
#include "msvq/config.hpp"
#include "msvq/data.hpp"
#include "msvq/model.hpp"
#include "msvq/optim.hpp"
#include "msvq/queue.hpp"

namespace msvq {

/// Loss or logits became non-finite; message carries the logits statistics.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> teacher_entropy_21;
  std::optional<double> teacher_entropy_31;
  std::optional<double> teacher_entropy_42;
  double wallclock_ms = 0.0;
  std::size_t backward_passes = 0;
};

nlohmann::json to_json(const StepMetrics& m);

template <class T>
struct TrainState {
  TrainConfig config;
  std::size_t steps_per_epoch;
  ChannelStats normalization;
  TriNetwork<T> nets;
  NegativeQueue<T> queue1;
  NegativeQueue<T> queue2;
  std::vector<Tensor<T>> velocity;
  std::size_t step = 0;
  std::size_t epoch = 0;
  /// Store labels next to queued embeddings (analysis only; the losses never read them).
  bool analysis_mode = false;

  /// Fresh state: student from the "init" stream, teachers copied from it,
  /// queues filled with random unit vectors.
  static TrainState initial(const TrainConfig& cfg, std::size_t steps_per_epoch, ChannelStats norm);

  LrSchedule schedule() const;
};

/// Optional probes between the phases of a step (tests use these to check
/// which phase touches which parameters).
template <class T>
struct StepObserver {
  std::function<void(const TrainState<T>&)> after_backward;
  std::function<void(const TrainState<T>&)> after_optimizer;
  std::function<void(const TrainState<T>&)> after_ema;
};

/// (x − mean_c)/std_c per channel, converted to T.
template <class T>
Tensor<T> normalize_images(const ImageBatch& batch, const ChannelStats& stats);

/// Runs one step on a raw (unaugmented) batch. labels are only used in analysis mode.
template <class T>
StepMetrics train_step(TrainState<T>& state, const ImageBatch& raw,
                       const std::vector<std::int32_t>* labels = nullptr,
                       const StepObserver<T>* observer = nullptr);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  /// Called after each completed epoch with the 1-based epoch count.
  std::function<void(std::size_t)> on_epoch;
};

/// Continues from state.epoch up to config.epochs, reshuffling each epoch.
template <class T>
std::vector<StepMetrics> train(TrainState<T>& state, const LabeledImageDataset& data,
                               const TrainHooks& hooks = {});

struct DatasetPair {
  LabeledImageDataset train;
  LabeledImageDataset test;
};

DatasetPair load_datasets(const DatasetSpec& spec);

/// Copies image geometry from the dataset into the encoder spec.
TrainConfig resolve_for_dataset(TrainConfig cfg, const LabeledImageDataset& data);

extern template struct TrainState<float>;
extern template struct TrainState<double>;

}  // namespace msvq
