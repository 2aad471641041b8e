// SPDX-License-Identifier: Apache-2.0
#include "msvq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "msvq/kernels.hpp"
#include "msvq/ops.hpp"
#include "msvq/relation.hpp"

namespace msvq {

nlohmann::json to_json(const StepMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return nlohmann::json{{"step", m.step},
                        {"epoch", m.epoch},
                        {"lr", m.lr},
                        {"loss", m.loss},
                        {"teacher_entropy_21", opt(m.teacher_entropy_21)},
                        {"teacher_entropy_31", opt(m.teacher_entropy_31)},
                        {"teacher_entropy_42", opt(m.teacher_entropy_42)},
                        {"wallclock_ms", m.wallclock_ms}};
}

template <class T>
TrainState<T> TrainState<T>::initial(const TrainConfig& cfg, std::size_t steps_per_epoch, ChannelStats norm) {
  cfg.validate();
  SeededRng init(cfg.seed, stream_id("init"));
  SeededRng q1(cfg.seed, stream_id("queue/1"));
  SeededRng q2(cfg.seed, stream_id("queue/2"));
  const std::size_t dim = cfg.encoder.embed_dim;
  return TrainState{cfg,
                    steps_per_epoch,
                    std::move(norm),
                    TriNetwork<T>(cfg.encoder, init, cfg.m1, cfg.m2),
                    NegativeQueue<T>(cfg.queue_size, dim, q1),
                    NegativeQueue<T>(cfg.queue_size, dim, q2),
                    {},
                    0,
                    0,
                    false};
}

template <class T>
LrSchedule TrainState<T>::schedule() const {
  return LrSchedule{config.base_lr, config.warmup_epochs * steps_per_epoch, config.epochs * steps_per_epoch};
}

template <class T>
Tensor<T> normalize_images(const ImageBatch& batch, const ChannelStats& stats) {
  require_rank(batch, 4, "normalize_images");
  const std::size_t n = batch.dim(0), c = batch.dim(1), plane = batch.dim(2) * batch.dim(3);
  if (stats.mean.size() != c || stats.stddev.size() != c) {
    throw ShapeError("normalize_images: statistics for " + std::to_string(stats.mean.size()) +
                     " channels, batch has " + std::to_string(c));
  }
  Tensor<T> out(batch.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double mu = stats.mean[ch], inv = 1.0 / stats.stddev[ch];
      const std::size_t base = (i * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[base + p] = static_cast<T>((batch[base + p] - mu) * inv);
    }
  return out;
}

namespace {

template <class T>
std::string describe(const char* name, const Tensor<T>& t) {
  double lo = INFINITY, hi = -INFINITY, sum = 0;
  std::size_t bad = 0;
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      ++bad;
      continue;
    }
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
    sum += v;
  }
  std::ostringstream os;
  os << "  " << name << " " << shape_str(t.shape()) << ": min=" << lo << " max=" << hi
     << " mean=" << (t.size() > bad ? sum / static_cast<double>(t.size() - bad) : 0.0)
     << " non_finite=" << bad << "\n";
  return os.str();
}

}  // namespace

template <class T>
StepMetrics train_step(TrainState<T>& state, const ImageBatch& raw, const std::vector<std::int32_t>* labels,
                       const StepObserver<T>* observer) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& cfg = state.config;
  const Method method = cfg.method;
  const bool third_view = uses_third_view(method);
  const bool second_queue = uses_second_queue(method);
  const std::size_t out_h = cfg.encoder.height, out_w = cfg.encoder.width;
  if (raw.rank() != 4 || raw.dim(0) == 0) throw ShapeError("train_step: expected a non-empty N x C x H x W batch");
  if (raw.dim(0) > cfg.queue_size) throw ShapeError("train_step: batch larger than queue");

  const SeededRng step_rng(cfg.seed, mix_stream(stream_id("augment"), state.step));
  const AugmentPolicy strong = AugmentPolicy::strong(out_h, out_w);
  const AugmentPolicy weak = AugmentPolicy::weak(out_h, out_w);
  auto view = [&](const AugmentPolicy& p, std::uint64_t k) {
    return normalize_images<T>(apply_policy(raw, p, step_rng.derive(k)), state.normalization);
  };
  const T eps = static_cast<T>(1e-12);

  TriNetwork<T>& nets = state.nets;
  nets.student.zero_grad();
  Tape<T> tape;
  Var<T> z1 = ops::l2_normalize_rows(nets.student.forward(tape, view(strong, 1)), eps);
  const Tensor<T> z2 = kernels::l2_normalize_rows(nets.teacher1.embed(view(weak, 2)), eps);
  Tensor<T> z3, z4;
  if (third_view) z3 = kernels::l2_normalize_rows(nets.teacher1.embed(view(weak, 3)), eps);
  if (second_queue) z4 = kernels::l2_normalize_rows(nets.teacher2.embed(view(weak, 4)), eps);

  const Tensor<T> q1 = state.queue1.as_matrix();
  StepMetrics m;
  m.step = state.step;
  m.epoch = state.epoch;
  m.lr = state.schedule().at(state.step);

  std::vector<std::pair<const char*, Tensor<T>>> logged;
  Var<T> loss;
  if (method == Method::MoCo) {
    loss = loss_moco(z1, z2, q1, cfg.temps.student);
  } else {
    Var<T> logits11 = similarity_logits(z1, q1);
    const Tensor<T> logits21 = similarity_logits(z2, q1);
    m.teacher_entropy_21 = teacher_entropy(logits21, cfg.temps.teacher);
    logged.emplace_back("logits11", logits11.value());
    logged.emplace_back("logits21", logits21);
    Tensor<T> logits31, logits42;
    Var<T> logits12;
    if (third_view) {
      logits31 = similarity_logits(z3, q1);
      m.teacher_entropy_31 = teacher_entropy(logits31, cfg.temps.teacher);
      logged.emplace_back("logits31", logits31);
    }
    if (second_queue) {
      const Tensor<T> q2 = state.queue2.as_matrix();
      logits12 = similarity_logits(z1, q2);
      logits42 = similarity_logits(z4, q2);
      m.teacher_entropy_42 = teacher_entropy(logits42, cfg.temps.teacher);
      logged.emplace_back("logits12", logits12.value());
      logged.emplace_back("logits42", logits42);
    }
    switch (method) {
      case Method::ReSSL: loss = loss_ressl(logits11, logits21, cfg.temps); break;
      case Method::MSV: loss = loss_msv(logits11, logits21, logits31, cfg.temps); break;
      case Method::MQ: loss = loss_mq(logits11, logits21, logits12, logits42, cfg.temps); break;
      default: loss = loss_msvq(logits11, logits12, logits21, logits31, logits42, cfg.temps); break;
    }
  }
  m.loss = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(m.loss)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << " (method " << to_string(method) << ")\n";
    os << describe("z1", z1.value()) << describe("z2", z2);
    for (const auto& [name, t] : logged) os << describe(name, t);
    throw NumericError(os.str());
  }

  tape.backward(loss);
  m.backward_passes = tape.backward_passes();
  if (observer && observer->after_backward) observer->after_backward(state);

  sgd_step(nets.student.parameter_ptrs(), state.velocity, m.lr, cfg.momentum, cfg.weight_decay);
  if (observer && observer->after_optimizer) observer->after_optimizer(state);

  ema_update(nets.teacher1, nets.student, nets.m1);
  if (second_queue) ema_update(nets.teacher2, nets.student, nets.m2);
  if (observer && observer->after_ema) observer->after_ema(state);

  const std::vector<std::int32_t>* tags = state.analysis_mode ? labels : nullptr;
  state.queue1.enqueue_dequeue(z2, tags, QueueSource::Teacher1View2);
  if (second_queue) state.queue2.enqueue_dequeue(z4, tags, QueueSource::Teacher2View4);

  ++state.step;
  m.wallclock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

template <class T>
std::vector<StepMetrics> train(TrainState<T>& state, const LabeledImageDataset& data, const TrainHooks& hooks) {
  const std::size_t n = state.config.batch_size;
  if (data.size() / n != state.steps_per_epoch) {
    throw UsageError("train: dataset yields " + std::to_string(data.size() / n) +
                     " steps per epoch but the state was built for " + std::to_string(state.steps_per_epoch));
  }
  std::vector<StepMetrics> log;
  while (state.epoch < state.config.epochs) {
    for (const auto& idx : batches(data.size(), n, state.config.seed, state.epoch)) {
      const ImageBatch raw = data.gather(idx);
      const auto labels = data.gather_labels(idx);
      StepMetrics m = train_step(state, raw, &labels);
      if (hooks.on_step) hooks.on_step(m);
      log.push_back(m);
    }
    ++state.epoch;
    if (hooks.on_epoch) hooks.on_epoch(state.epoch);
  }
  return log;
}

DatasetPair load_datasets(const DatasetSpec& spec) {
  if (spec.kind == "synthetic") {
    SynthSpec train = spec.synth;
    train.sample_stream = 0;
    SynthSpec test = spec.synth;
    test.sample_stream = 1;
    test.per_class = spec.test_per_class;
    return {synth_clusters(train), synth_clusters(test)};
  }
  if (spec.kind == "cifar10") {
    LabeledImageDataset train = load_cifar10(spec.cifar_dir, Split::Train);
    if (spec.subset > 0) {
      const auto idx = stratified_subset(train, spec.subset, spec.synth.seed);
      train = train.subset(idx);
    }
    return {std::move(train), load_cifar10(spec.cifar_dir, Split::Test)};
  }
  throw ConfigError("data.kind", "expected synthetic or cifar10, got '" + spec.kind + "'");
}

TrainConfig resolve_for_dataset(TrainConfig cfg, const LabeledImageDataset& data) {
  cfg.encoder.channels = data.channels;
  cfg.encoder.height = data.height;
  cfg.encoder.width = data.width;
  return cfg;
}

template struct TrainState<float>;
template struct TrainState<double>;
template Tensor<float> normalize_images(const ImageBatch&, const ChannelStats&);
template Tensor<double> normalize_images(const ImageBatch&, const ChannelStats&);
template StepMetrics train_step(TrainState<float>&, const ImageBatch&, const std::vector<std::int32_t>*,
                                const StepObserver<float>*);
template StepMetrics train_step(TrainState<double>&, const ImageBatch&, const std::vector<std::int32_t>*,
                                const StepObserver<double>*);
template std::vector<StepMetrics> train(TrainState<float>&, const LabeledImageDataset&, const TrainHooks&);
template std::vector<StepMetrics> train(TrainState<double>&, const LabeledImageDataset&, const TrainHooks&);

}  // namespace msvq
