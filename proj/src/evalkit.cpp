// SPDX-License-Identifier: Apache-2.0
#include "msvq/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msvq/kernels.hpp"
#include "msvq/ops.hpp"
#include "msvq/optim.hpp"
#include "msvq/trainer.hpp"

namespace msvq {

void FeatureBank::validate() const {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw ShapeError("FeatureBank: " + shape_str(features.shape()) + " features for " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t r = 0; r < size(); ++r) {
    double s = 0;
    for (double v : features.row(r)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > 1e-5) throw ShapeError("FeatureBank: row " + std::to_string(r) + " is not unit-norm");
  }
}

FeatureBank make_bank(const Tensor<double>& rows, std::vector<std::int32_t> labels) {
  require_rank(rows, 2, "make_bank");
  if (rows.dim(0) != labels.size()) {
    throw ShapeError("make_bank: " + std::to_string(rows.dim(0)) + " rows for " + std::to_string(labels.size()) +
                     " labels");
  }
  return FeatureBank{kernels::l2_normalize_rows(rows, 1e-12), std::move(labels)};
}

template <class T>
Tensor<double> pooled_features(const Network<T>& net, const LabeledImageDataset& data, const ChannelStats& norm,
                               std::size_t batch_size) {
  const EncoderSpec& spec = net.spec();
  if (data.channels != spec.channels || data.height != spec.height || data.width != spec.width) {
    throw ShapeError("extract_features: dataset images are " + std::to_string(data.channels) + "x" +
                     std::to_string(data.height) + "x" + std::to_string(data.width) + ", encoder expects " +
                     std::to_string(spec.channels) + "x" + std::to_string(spec.height) + "x" +
                     std::to_string(spec.width));
  }
  if (batch_size == 0) throw ParameterError("extract_features: batch_size must be positive");
  const std::size_t m = data.size();
  Tensor<double> rows({m, net.feature_dim()});
  for (std::size_t start = 0; start < m; start += batch_size) {
    const std::size_t end = std::min(m, start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> f = net.pooled_features(normalize_images<T>(data.gather(idx), norm));
    for (std::size_t i = 0; i < f.size(); ++i) rows[start * f.dim(1) + i] = static_cast<double>(f[i]);
  }
  return rows;
}

FeatureStats feature_stats(const Tensor<double>& pooled) {
  require_rank(pooled, 2, "feature_stats");
  const std::size_t m = pooled.dim(0), d = pooled.dim(1);
  if (m == 0) throw EmptyBankError("feature_stats: no rows");
  FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += pooled.at(r, j);
  for (double& v : s.mean) v /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double e = pooled.at(r, j) - s.mean[j];
      s.stddev[j] += e * e;
    }
  // Same epsilon as the in-network standardisation.
  for (double& v : s.stddev) v = std::sqrt(v / static_cast<double>(m) + 1e-5);
  return s;
}

namespace {

FeatureBank standardized_bank(Tensor<double> rows, const FeatureStats& s, std::vector<std::int32_t> labels) {
  for (std::size_t r = 0; r < rows.dim(0); ++r) {
    auto row = rows.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - s.mean[j]) / s.stddev[j];
  }
  return make_bank(rows, std::move(labels));
}

}  // namespace

template <class T>
FeatureBank extract_features(const Network<T>& net, const LabeledImageDataset& data, const ChannelStats& norm,
                             const FeatureStats* stats) {
  Tensor<double> rows = pooled_features(net, data, norm);
  if (data.size() == 0) return FeatureBank{rows, {}};
  const FeatureStats own = stats ? *stats : feature_stats(rows);
  if (own.mean.size() != rows.dim(1)) throw ShapeError("extract_features: statistics dimension mismatch");
  return standardized_bank(std::move(rows), own, data.labels);
}

template <class T>
std::pair<FeatureBank, FeatureBank> extract_bank_pair(const Network<T>& net, const LabeledImageDataset& train,
                                                      const LabeledImageDataset& test, const ChannelStats& norm) {
  Tensor<double> rows = pooled_features(net, train, norm);
  const FeatureStats stats = feature_stats(rows);
  FeatureBank train_bank = standardized_bank(std::move(rows), stats, train.labels);
  return {std::move(train_bank), extract_features(net, test, norm, &stats)};
}

std::vector<std::int32_t> knn_predict(const FeatureBank& train, const FeatureBank& test, const KnnOptions& opts) {
  if (train.size() == 0) throw EmptyBankError("knn: training bank is empty");
  if (test.size() == 0) throw EmptyBankError("knn: test bank is empty");
  if (train.dim() != test.dim()) {
    throw ShapeError("knn: feature dims differ (" + std::to_string(train.dim()) + " vs " +
                     std::to_string(test.dim()) + ")");
  }
  if (opts.k == 0 || opts.k > train.size()) {
    throw ParameterError("knn: K=" + std::to_string(opts.k) + " must be in [1, " + std::to_string(train.size()) + "]");
  }
  if (!(opts.temperature > 0)) throw ParameterError("knn: vote temperature must be positive");
  const std::int32_t classes = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
  const Tensor<double> sims = kernels::matmul_nt(test.features, train.features);

  std::vector<std::int32_t> pred(test.size());
  std::vector<std::size_t> order(train.size());
  std::vector<double> score(static_cast<std::size_t>(classes));
  for (std::size_t r = 0; r < test.size(); ++r) {
    const auto s = sims.row(r);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(opts.k), order.end(),
                      [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    std::fill(score.begin(), score.end(), 0.0);
    for (std::size_t j = 0; j < opts.k; ++j) {
      const std::size_t n = order[j];
      score[static_cast<std::size_t>(train.labels[n])] +=
          opts.vote == Vote::Weighted ? std::exp(s[n] / opts.temperature) : 1.0;
    }
    // max_element returns the first maximum, i.e. the smallest class id on ties.
    pred[r] = static_cast<std::int32_t>(std::max_element(score.begin(), score.end()) - score.begin());
  }
  return pred;
}

double knn_evaluate(const FeatureBank& train, const FeatureBank& test, const KnnOptions& opts) {
  const auto pred = knn_predict(train, test, opts);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ProbeOptions ProbeOptions::from(const ProbeConfig& cfg, std::uint64_t seed) {
  return ProbeOptions{cfg.epochs, cfg.batch_size, cfg.base_lr, cfg.momentum, cfg.weight_decay, seed};
}

double linear_probe(const FeatureBank& train, const FeatureBank& test, std::size_t class_count,
                    const ProbeOptions& opts) {
  if (class_count < 2) throw ParameterError("linear_probe: class_count must be at least 2");
  if (train.size() == 0 || test.size() == 0) throw EmptyBankError("linear_probe: empty bank");
  if (train.dim() != test.dim()) throw ShapeError("linear_probe: feature dims differ");
  for (const auto* bank : {&train, &test})
    for (std::int32_t l : bank->labels)
      if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
        throw ParameterError("linear_probe: label " + std::to_string(l) + " outside [0, class_count)");
      }
  const std::size_t d = train.dim();
  const std::size_t n = std::min(opts.batch_size, train.size());
  if (n == 0) throw ParameterError("linear_probe: batch_size must be positive");

  Parameter<double> weight("probe.weight", Tensor<double>({d, class_count}));
  Parameter<double> bias("probe.bias", Tensor<double>({class_count}));
  std::vector<Parameter<double>*> params{&weight, &bias};
  std::vector<Tensor<double>> velocity;
  const std::size_t per_epoch = train.size() / n;
  const LrSchedule schedule{opts.lr, 0, opts.epochs * per_epoch};

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const auto& idx : batches(train.size(), n, opts.seed, epoch)) {
      Tensor<double> x({idx.size(), d});
      Tensor<double> target({idx.size(), class_count});
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto src = train.features.row(idx[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
        target.at(i, static_cast<std::size_t>(train.labels[idx[i]])) = 1.0;
      }
      weight.zero_grad();
      bias.zero_grad();
      Tape<double> tape;
      Var<double> logits = ops::add_bias(ops::matmul(tape.constant(x), tape.param(weight)), tape.param(bias));
      tape.backward(ops::soft_cross_entropy(logits, target, 1.0));
      sgd_step(params, velocity, schedule.at(step), opts.momentum, opts.weight_decay);
      ++step;
    }
  }

  Tensor<double> logits = kernels::matmul(test.features, weight.value);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    auto row = logits.row(r);
    for (std::size_t c = 0; c < class_count; ++c) row[c] += bias.value[c];
    const auto best = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == test.labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"method", r.method},           {"dataset", r.dataset},         {"mode", r.mode},
                   {"K", r.k},                     {"accuracy", r.accuracy},       {"class_count", r.class_count},
                   {"train_size", r.train_size},   {"test_size", r.test_size}};
  if (r.mode != "knn") j["K"] = nullptr;
  return j;
}

#define MSVQ_INSTANTIATE(T)                                                                                   \
  template Tensor<double> pooled_features(const Network<T>&, const LabeledImageDataset&, const ChannelStats&,    \
                                          std::size_t);                                                         \
  template FeatureBank extract_features(const Network<T>&, const LabeledImageDataset&, const ChannelStats&,      \
                                        const FeatureStats*);                                                   \
  template std::pair<FeatureBank, FeatureBank> extract_bank_pair(const Network<T>&, const LabeledImageDataset&,  \
                                                                 const LabeledImageDataset&, const ChannelStats&);

MSVQ_INSTANTIATE(float)
MSVQ_INSTANTIATE(double)
#undef MSVQ_INSTANTIATE

}  // namespace msvq
