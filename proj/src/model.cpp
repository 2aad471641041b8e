// SPDX-License-Identifier: Apache-2.0
#include "msvq/model.hpp"

#include <cmath>
#include <cstring>

#include "msvq/ops.hpp"

namespace msvq {

namespace {

template <class T>
Parameter<T> uniform_param(std::string name, Shape shape, std::size_t fan_in, SeededRng& rng) {
  Tensor<T> v(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& x : v.data()) x = static_cast<T>(rng.uniform(-bound, bound));
  return Parameter<T>(std::move(name), std::move(v));
}

template <class T>
void check_images(const Tensor<T>& images, const EncoderSpec& spec) {
  if (images.rank() != 4 || images.dim(1) != spec.channels || images.dim(2) != spec.height ||
      images.dim(3) != spec.width) {
    throw ShapeError("encoder expects N x " + std::to_string(spec.channels) + " x " +
                     std::to_string(spec.height) + " x " + std::to_string(spec.width) + " images, got " +
                     shape_str(images.shape()));
  }
}

}  // namespace

std::string to_string(BackboneKind kind) { return kind == BackboneKind::Conv ? "conv" : "mlp"; }

BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "conv") return BackboneKind::Conv;
  if (s == "mlp") return BackboneKind::Mlp;
  throw ParameterError("unknown backbone kind '" + s + "' (expected conv or mlp)");
}

template <class T>
std::vector<Parameter<T>> ConvBackbone<T>::init_parameters(SeededRng& rng) const {
  const std::size_t c0 = spec_.channels, c1 = spec_.conv_channels, c2 = spec_.feature_dim;
  std::vector<Parameter<T>> p;
  p.push_back(uniform_param<T>("backbone.conv1.weight", {c1, c0 * 9}, c0 * 9, rng));
  p.push_back(uniform_param<T>("backbone.conv1.bias", {c1}, c0 * 9, rng));
  p.push_back(uniform_param<T>("backbone.conv2.weight", {c2, c1 * 9}, c1 * 9, rng));
  p.push_back(uniform_param<T>("backbone.conv2.bias", {c2}, c1 * 9, rng));
  return p;
}

template <class T>
Var<T> ConvBackbone<T>::forward(Tape<T>&, const Var<T>& images, const std::vector<Var<T>>& p) const {
  Var<T> h = ops::max_pool2(ops::relu(ops::conv2d(images, p[0], p[1], 3, 1)));
  h = ops::max_pool2(ops::relu(ops::conv2d(h, p[2], p[3], 3, 1)));
  return ops::global_avg_pool(h);
}

template <class T>
std::vector<Parameter<T>> MlpBackbone<T>::init_parameters(SeededRng& rng) const {
  const std::size_t in = spec_.channels * spec_.height * spec_.width;
  std::vector<Parameter<T>> p;
  p.push_back(uniform_param<T>("backbone.fc.weight", {in, spec_.feature_dim}, in, rng));
  p.push_back(uniform_param<T>("backbone.fc.bias", {spec_.feature_dim}, in, rng));
  return p;
}

template <class T>
Var<T> MlpBackbone<T>::forward(Tape<T>&, const Var<T>& images, const std::vector<Var<T>>& p) const {
  const std::size_t n = images.value().dim(0);
  Var<T> flat = ops::reshape(images, {n, images.value().size() / n});
  return ops::relu(ops::add_bias(ops::matmul(flat, p[0]), p[1]));
}

template <class T>
Network<T>::Network(const EncoderSpec& spec, SeededRng& rng) : spec_(spec) {
  if (spec.kind == BackboneKind::Conv) {
    backbone_ = std::make_shared<ConvBackbone<T>>(spec);
  } else {
    backbone_ = std::make_shared<MlpBackbone<T>>(spec);
  }
  params_ = backbone_->init_parameters(rng);
  backbone_params_ = params_.size();
  const std::size_t f = spec.feature_dim, h = spec.hidden_dim, e = spec.embed_dim;
  params_.push_back(uniform_param<T>("projector.fc1.weight", {f, h}, f, rng));
  params_.push_back(uniform_param<T>("projector.fc1.bias", {h}, f, rng));
  params_.push_back(uniform_param<T>("projector.fc2.weight", {h, e}, h, rng));
  params_.push_back(uniform_param<T>("projector.fc2.bias", {e}, h, rng));
}

template <class T>
Var<T> Network<T>::run(Tape<T>& tape, const Tensor<T>& images, const std::vector<Var<T>>& bound,
                       bool project) const {
  check_images(images, spec_);
  Var<T> x = tape.constant(images);
  std::vector<Var<T>> bb(bound.begin(), bound.begin() + static_cast<long>(backbone_params_));
  Var<T> feat = ops::batch_norm(backbone_->forward(tape, x, bb));
  if (!project) return feat;
  const std::size_t k = backbone_params_;
  Var<T> h = ops::relu(ops::add_bias(ops::matmul(feat, bound[k]), bound[k + 1]));
  return ops::add_bias(ops::matmul(h, bound[k + 2]), bound[k + 3]);
}

template <class T>
std::vector<Var<T>> Network<T>::bind_const(Tape<T>& tape) const {
  std::vector<Var<T>> bound;
  bound.reserve(params_.size());
  for (const auto& p : params_) bound.push_back(tape.constant(p.value));
  return bound;
}

template <class T>
Var<T> Network<T>::forward(Tape<T>& tape, const Tensor<T>& images) {
  std::vector<Var<T>> bound;
  bound.reserve(params_.size());
  for (auto& p : params_) bound.push_back(tape.param(p));
  return run(tape, images, bound, true);
}

template <class T>
Var<T> Network<T>::forward_frozen(Tape<T>& tape, const Tensor<T>& images) const {
  return run(tape, images, bind_const(tape), true);
}

template <class T>
Tensor<T> Network<T>::embed(const Tensor<T>& images) const {
  Tape<T> tape(false);
  return forward_frozen(tape, images).value();
}

template <class T>
Tensor<T> Network<T>::pooled_features(const Tensor<T>& images) const {
  check_images(images, spec_);
  Tape<T> tape(false);
  const std::vector<Var<T>> bound = bind_const(tape);
  const std::vector<Var<T>> bb(bound.begin(), bound.begin() + static_cast<long>(backbone_params_));
  return backbone_->forward(tape, tape.constant(images), bb).value();
}

template <class T>
Tensor<T> Network<T>::features(const Tensor<T>& images) const {
  Tape<T> tape(false);
  return run(tape, images, bind_const(tape), false).value();
}

template <class T>
std::vector<Parameter<T>*> Network<T>::parameter_ptrs() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <class T>
void Network<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

template <class T>
void check_same_layout(const Network<T>& a, const Network<T>& b) {
  const auto& pa = a.parameters();
  const auto& pb = b.parameters();
  if (pa.size() != pb.size()) {
    throw StructureError("networks have " + std::to_string(pa.size()) + " vs " +
                         std::to_string(pb.size()) + " parameter tensors");
  }
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value.shape() != pb[i].value.shape()) {
      throw StructureError("parameter " + pa[i].name + ": " + shape_str(pa[i].value.shape()) + " vs " +
                           shape_str(pb[i].value.shape()));
    }
  }
}

}  // namespace

template <class T>
void ema_update(Network<T>& teacher, const Network<T>& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ParameterError("EMA momentum must lie in [0,1]");
  check_same_layout(teacher, student);
  const T keep = static_cast<T>(m), take = static_cast<T>(1.0 - m);
  auto& tp = teacher.parameters();
  const auto& sp = student.parameters();
  for (std::size_t k = 0; k < tp.size(); ++k) {
    auto t = tp[k].value.data();
    auto s = sp[k].value.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = keep * t[i] + take * s[i];
  }
}

template <class T>
T max_parameter_diff(const Network<T>& a, const Network<T>& b) {
  check_same_layout(a, b);
  T worst = 0;
  for (std::size_t k = 0; k < a.parameters().size(); ++k) {
    worst = std::max(worst, max_abs_diff(a.parameters()[k].value, b.parameters()[k].value));
  }
  return worst;
}

template <class T>
std::uint64_t parameter_hash(const Network<T>& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : net.parameters()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data().data());
    for (std::size_t i = 0; i < p.value.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template <class T>
TriNetwork<T>::TriNetwork(const EncoderSpec& spec, SeededRng& rng, double m1_, double m2_)
    : student(spec, rng), teacher1(student), teacher2(student), m1(m1_), m2(m2_) {
  if (!(m1 >= 0.0 && m1 <= 1.0 && m2 >= 0.0 && m2 <= 1.0)) {
    throw ParameterError("momentum coefficients must lie in [0,1]");
  }
}

template <class T>
void TriNetwork<T>::init_teachers() {
  teacher1 = student;
  teacher2 = student;
  teacher1.zero_grad();
  teacher2.zero_grad();
}

template <class T>
void TriNetwork<T>::momentum_update() {
  ema_update(teacher1, student, m1);
  ema_update(teacher2, student, m2);
}

template class ConvBackbone<float>;
template class ConvBackbone<double>;
template class MlpBackbone<float>;
template class MlpBackbone<double>;
template class Network<float>;
template class Network<double>;
template struct TriNetwork<float>;
template struct TriNetwork<double>;
template void ema_update(Network<float>&, const Network<float>&, double);
template void ema_update(Network<double>&, const Network<double>&, double);
template float max_parameter_diff(const Network<float>&, const Network<float>&);
template double max_parameter_diff(const Network<double>&, const Network<double>&);
template std::uint64_t parameter_hash(const Network<float>&);
template std::uint64_t parameter_hash(const Network<double>&);

}  // namespace msvq
