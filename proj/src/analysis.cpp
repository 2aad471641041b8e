// SPDX-License-Identifier: Apache-2.0
#include "msvq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "msvq/kernels.hpp"

namespace msvq {

namespace {

void check_distribution(const Tensor<double>& p, std::size_t n, std::size_t q, const char* name) {
  if (p.rank() != 2 || p.dim(0) != n || p.dim(1) != q) {
    throw ShapeError(std::string("SoftLabelSnapshot: ") + name + " is " + shape_str(p.shape()) + ", expected " +
                     shape_str({n, q}));
  }
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (double v : p.row(r)) s += v;
    if (std::abs(s - 1.0) > 1e-6) {
      throw ShapeError(std::string("SoftLabelSnapshot: ") + name + " row " + std::to_string(r) + " sums to " +
                       std::to_string(s));
    }
  }
}

void check_counting_args(const Tensor<double>& probs, const std::vector<std::int32_t>& queue_labels,
                         const std::vector<std::int32_t>& positive_labels, std::size_t k) {
  require_rank(probs, 2, "false_negatives_topk");
  if (probs.dim(0) != positive_labels.size()) {
    throw ShapeError("false negatives: " + std::to_string(probs.dim(0)) + " rows but " +
                     std::to_string(positive_labels.size()) + " positive labels");
  }
  if (probs.dim(1) != queue_labels.size()) {
    throw ShapeError("false negatives: " + std::to_string(probs.dim(1)) + " queue entries but " +
                     std::to_string(queue_labels.size()) + " queue labels");
  }
  if (k > probs.dim(1)) {
    throw ParameterError("false negatives: k=" + std::to_string(k) + " exceeds queue size " +
                         std::to_string(probs.dim(1)));
  }
}

std::vector<std::size_t> hits(std::span<const double> row, const std::vector<std::int32_t>& queue_labels,
                              std::int32_t positive, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t j : topk_indices(row, k))
    if (queue_labels[j] == positive) out.push_back(j);
  return out;
}

}  // namespace

void SoftLabelSnapshot::validate() const {
  const std::size_t n = positive_labels.size();
  const std::size_t q = queue1_labels.size();
  if (queue2_labels.size() != q) throw ShapeError("SoftLabelSnapshot: queue label arrays differ in length");
  check_distribution(p21, n, q, "P21");
  check_distribution(p31, n, q, "P31");
  check_distribution(p42, n, q, "P42");
}

std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

double false_negatives_topk(const Tensor<double>& probs, const std::vector<std::int32_t>& queue_labels,
                            const std::vector<std::int32_t>& positive_labels, std::size_t k) {
  check_counting_args(probs, queue_labels, positive_labels, k);
  if (probs.dim(0) == 0) return 0.0;
  std::size_t total = 0;
  for (std::size_t r = 0; r < probs.dim(0); ++r) total += hits(probs.row(r), queue_labels, positive_labels[r], k).size();
  return static_cast<double>(total) / static_cast<double>(probs.dim(0));
}

double false_negatives_union(const SoftLabelSnapshot& s, std::size_t k) {
  s.validate();
  check_counting_args(s.p21, s.queue1_labels, s.positive_labels, k);
  const std::size_t n = s.positive_labels.size();
  if (n == 0) return 0.0;
  std::size_t total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::int32_t pos = s.positive_labels[r];
    std::set<std::size_t> from_queue1;
    for (std::size_t j : hits(s.p21.row(r), s.queue1_labels, pos, k)) from_queue1.insert(j);
    for (std::size_t j : hits(s.p31.row(r), s.queue1_labels, pos, k)) from_queue1.insert(j);
    total += from_queue1.size() + hits(s.p42.row(r), s.queue2_labels, pos, k).size();
  }
  return static_cast<double>(total) / static_cast<double>(n);
}

FalseNegativeReport count_false_negatives(const SoftLabelSnapshot& s, std::size_t k) {
  s.validate();
  FalseNegativeReport r;
  r.fn_top5_P21 = false_negatives_topk(s.p21, s.queue1_labels, s.positive_labels, k);
  r.fn_top5_P31 = false_negatives_topk(s.p31, s.queue1_labels, s.positive_labels, k);
  r.fn_top5_P42 = false_negatives_topk(s.p42, s.queue2_labels, s.positive_labels, k);
  r.fn_top5_all = false_negatives_union(s, k);
  return r;
}

nlohmann::json to_json(const FalseNegativeReport& r) {
  return nlohmann::json{{"step", r.step},
                        {"fn_top5_P21", r.fn_top5_P21},
                        {"fn_top5_P31", r.fn_top5_P31},
                        {"fn_top5_P42", r.fn_top5_P42},
                        {"fn_top5_all", r.fn_top5_all}};
}

namespace {

template <class T>
Tensor<T> teacher_view(const Network<T>& teacher, const ImageBatch& raw, const TrainState<T>& state,
                       const SeededRng& rng) {
  const AugmentPolicy weak = AugmentPolicy::weak(state.config.encoder.height, state.config.encoder.width);
  return kernels::l2_normalize_rows(teacher.embed(normalize_images<T>(apply_policy(raw, weak, rng), state.normalization)),
                                    static_cast<T>(1e-12));
}

template <class T>
Tensor<double> soft_labels(const Tensor<T>& z, const Tensor<T>& queue, double tau) {
  return relation_distribution(similarity_logits(z, queue).template cast<double>(), tau, RelationSource::P21).probs;
}

}  // namespace

template <class T>
SoftLabelSnapshot make_snapshot(const TrainState<T>& state, const ImageBatch& raw,
                                const std::vector<std::int32_t>& labels, const SeededRng& rng) {
  const double tau = state.config.temps.teacher;
  const Tensor<T> q1 = state.queue1.as_matrix(), q2 = state.queue2.as_matrix();
  SoftLabelSnapshot s;
  s.p21 = soft_labels(teacher_view(state.nets.teacher1, raw, state, rng.derive(2)), q1, tau);
  s.p31 = soft_labels(teacher_view(state.nets.teacher1, raw, state, rng.derive(3)), q1, tau);
  s.p42 = soft_labels(teacher_view(state.nets.teacher2, raw, state, rng.derive(4)), q2, tau);
  s.queue1_labels = state.queue1.labels();
  s.queue2_labels = state.queue2.labels();
  s.positive_labels = labels;
  return s;
}

template <class T>
FalseNegativeReport analyze_false_negatives(TrainState<T>& state, const LabeledImageDataset& data, std::size_t k) {
  const std::size_t n = std::min(state.config.batch_size, data.size());
  if (n == 0) throw UsageError("analyze_false_negatives: empty dataset");
  const std::size_t q = state.config.queue_size;
  state.analysis_mode = true;
  const std::uint64_t seed = state.config.seed;

  auto enqueue = [&](const ImageBatch& raw, const std::vector<std::int32_t>& labels, const SeededRng& rng) {
    state.queue1.enqueue_dequeue(teacher_view(state.nets.teacher1, raw, state, rng.derive(2)), &labels,
                                 QueueSource::Teacher1View2);
    state.queue2.enqueue_dequeue(teacher_view(state.nets.teacher2, raw, state, rng.derive(4)), &labels,
                                 QueueSource::Teacher2View4);
  };

  // Warm-up: refill both queues with labelled teacher embeddings.
  const std::size_t warm = (q + n - 1) / n;
  std::size_t done = 0;
  for (std::uint64_t pass = 0; done < warm; ++pass) {
    for (const auto& idx : batches(data.size(), n, seed, mix_stream(stream_id("analysis/warm"), pass))) {
      if (done == warm) break;
      const SeededRng rng(seed, mix_stream(stream_id("analysis/warm"), done));
      enqueue(data.gather(idx), data.gather_labels(idx), rng);
      ++done;
    }
  }

  FalseNegativeReport total;
  std::size_t rows = 0;
  std::size_t b = 0;
  for (const auto& idx : batches(data.size(), n, seed, stream_id("analysis/score"))) {
    const ImageBatch raw = data.gather(idx);
    const auto labels = data.gather_labels(idx);
    const SeededRng rng(seed, mix_stream(stream_id("analysis/score"), b++));
    const FalseNegativeReport r = count_false_negatives(make_snapshot(state, raw, labels, rng), k);
    const double w = static_cast<double>(labels.size());
    total.fn_top5_P21 += w * r.fn_top5_P21;
    total.fn_top5_P31 += w * r.fn_top5_P31;
    total.fn_top5_P42 += w * r.fn_top5_P42;
    total.fn_top5_all += w * r.fn_top5_all;
    rows += labels.size();
    enqueue(raw, labels, rng);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  total.fn_top5_P21 *= inv;
  total.fn_top5_P31 *= inv;
  total.fn_top5_P42 *= inv;
  total.fn_top5_all *= inv;
  total.step = state.step;
  return total;
}

void export_embeddings(const FeatureBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write embeddings to " + path.string());
  const std::size_t d = bank.dim();
  out << "label";
  for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
  out << "\n";
  char buf[32];
  for (std::size_t r = 0; r < bank.size(); ++r) {
    out << bank.labels[r];
    for (double v : bank.features.row(r)) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

template SoftLabelSnapshot make_snapshot(const TrainState<float>&, const ImageBatch&,
                                         const std::vector<std::int32_t>&, const SeededRng&);
template SoftLabelSnapshot make_snapshot(const TrainState<double>&, const ImageBatch&,
                                         const std::vector<std::int32_t>&, const SeededRng&);
template FalseNegativeReport analyze_false_negatives(TrainState<float>&, const LabeledImageDataset&, std::size_t);
template FalseNegativeReport analyze_false_negatives(TrainState<double>&, const LabeledImageDataset&, std::size_t);

}  // namespace msvq
