// SPDX-License-Identifier: Apache-2.0
//
// Evaluation over frozen backbone features: weighted KNN and a linear probe.
// The projector is not used here; features come from the backbone output.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msvq/config.hpp"
#include "msvq/data.hpp"
#include "msvq/model.hpp"

namespace msvq {

class EmptyBankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// M×D unit-norm feature rows with their class ids.
struct FeatureBank {
  Tensor<double> features;
  std::vector<std::int32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.rank() == 2 ? features.dim(1) : 0; }
  /// Throws ShapeError when rows and labels disagree or a row is not unit-norm.
  void validate() const;
};

/// Builds a bank from raw rows; each row is L2-normalised.
FeatureBank make_bank(const Tensor<double>& rows, std::vector<std::int32_t> labels);

/// Per-feature mean and standard deviation of pooled backbone outputs.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Pooled backbone outputs (before standardisation) for every image, no augmentation.
template <class T>
Tensor<double> pooled_features(const Network<T>& net, const LabeledImageDataset& data, const ChannelStats& norm,
                               std::size_t batch_size = 256);

FeatureStats feature_stats(const Tensor<double>& pooled);

/// Backbone features of every image, L2-normalised. The final standardisation
/// uses `stats` when given (e.g. training-set statistics for a test bank) and
/// the statistics of `data` itself otherwise, so a feature never depends on
/// which other images share its batch.
template <class T>
FeatureBank extract_features(const Network<T>& net, const LabeledImageDataset& data, const ChannelStats& norm,
                             const FeatureStats* stats = nullptr);

/// Train and test banks, both standardised with training-set statistics.
template <class T>
std::pair<FeatureBank, FeatureBank> extract_bank_pair(const Network<T>& net, const LabeledImageDataset& train,
                                                      const LabeledImageDataset& test, const ChannelStats& norm);

enum class Vote { Weighted, Majority };

struct KnnOptions {
  std::size_t k = 200;
  double temperature = 0.07;
  Vote vote = Vote::Weighted;
};

std::vector<std::int32_t> knn_predict(const FeatureBank& train, const FeatureBank& test, const KnnOptions& opts = {});
double knn_evaluate(const FeatureBank& train, const FeatureBank& test, const KnnOptions& opts = {});

struct ProbeOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  static ProbeOptions from(const ProbeConfig& cfg, std::uint64_t seed);
};

/// Trains featDim→class_count with softmax cross-entropy and cosine-decayed
/// SGD on the frozen train bank; returns test accuracy.
double linear_probe(const FeatureBank& train, const FeatureBank& test, std::size_t class_count,
                    const ProbeOptions& opts = {});

struct EvalReport {
  std::string method;
  std::string dataset;
  std::string mode;
  std::size_t k = 0;
  double accuracy = 0.0;
  std::size_t class_count = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

nlohmann::json to_json(const EvalReport& r);

}  // namespace msvq
