// SPDX-License-Identifier: Apache-2.0
//
// Encoder networks: a pluggable backbone f(·) followed by a two-layer projector
// g(·). The student is trained by SGD; the two teachers only ever move through
// ema_update().
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "msvq/rng.hpp"
#include "msvq/tape.hpp"

namespace msvq {

/// Two networks that should share a structure do not.
class StructureError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

enum class BackboneKind { Conv, Mlp };

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& s);

struct EncoderSpec {
  BackboneKind kind = BackboneKind::Conv;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t conv_channels = 32;  // first conv block width (conv backbone only)
  std::size_t feature_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t embed_dim = 32;
};

/// Stateless architecture description; parameters live in Network.
template <class T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::vector<Parameter<T>> init_parameters(SeededRng& rng) const = 0;
  /// images: N×C×H×W; returns N×feature_dim.
  virtual Var<T> forward(Tape<T>& tape, const Var<T>& images, const std::vector<Var<T>>& params) const = 0;
  virtual std::size_t feature_dim() const = 0;
};

/// conv3x3 → relu → maxpool2 → conv3x3 → relu → maxpool2 → global average pool.
/// Network standardises the pooled output per feature over the batch.
template <class T>
class ConvBackbone final : public Backbone<T> {
 public:
  explicit ConvBackbone(const EncoderSpec& spec) : spec_(spec) {}
  std::vector<Parameter<T>> init_parameters(SeededRng& rng) const override;
  Var<T> forward(Tape<T>& tape, const Var<T>& images, const std::vector<Var<T>>& params) const override;
  std::size_t feature_dim() const override { return spec_.feature_dim; }

 private:
  EncoderSpec spec_;
};

/// flatten → affine → relu. Small enough for exhaustive gradient checks.
template <class T>
class MlpBackbone final : public Backbone<T> {
 public:
  explicit MlpBackbone(const EncoderSpec& spec) : spec_(spec) {}
  std::vector<Parameter<T>> init_parameters(SeededRng& rng) const override;
  Var<T> forward(Tape<T>& tape, const Var<T>& images, const std::vector<Var<T>>& params) const override;
  std::size_t feature_dim() const override { return spec_.feature_dim; }

 private:
  EncoderSpec spec_;
};

/// Encoder f followed by projector g (fc → relu → fc). f ends by standardising
/// each backbone output feature with the statistics of the current batch.
template <class T>
class Network {
 public:
  Network(const EncoderSpec& spec, SeededRng& rng);

  /// g(f(images)) with parameters bound through tape.param(), so backward()
  /// accumulates into each Parameter::grad.
  Var<T> forward(Tape<T>& tape, const Tensor<T>& images);

  /// g(f(images)) with parameters entered as constants: nothing computed from
  /// them carries gradient back to this network.
  Var<T> forward_frozen(Tape<T>& tape, const Tensor<T>& images) const;

  /// forward_frozen on a private non-recording tape.
  Tensor<T> embed(const Tensor<T>& images) const;

  /// f(images) only (projector discarded), evaluated without gradient. The
  /// final standardisation uses the statistics of this batch.
  Tensor<T> features(const Tensor<T>& images) const;

  /// Backbone output before the final standardisation; independent of batch
  /// composition.
  Tensor<T> pooled_features(const Tensor<T>& images) const;

  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::vector<Parameter<T>*> parameter_ptrs();
  std::size_t parameter_count() const;
  std::size_t feature_dim() const { return backbone_->feature_dim(); }
  const EncoderSpec& spec() const noexcept { return spec_; }
  void zero_grad();

 private:
  Var<T> run(Tape<T>& tape, const Tensor<T>& images, const std::vector<Var<T>>& bound, bool project) const;
  std::vector<Var<T>> bind_const(Tape<T>& tape) const;

  EncoderSpec spec_;
  std::shared_ptr<const Backbone<T>> backbone_;
  std::vector<Parameter<T>> params_;
  std::size_t backbone_params_ = 0;
};

/// θ_t ← m·θ_t + (1−m)·θ_s over every parameter.
template <class T>
void ema_update(Network<T>& teacher, const Network<T>& student, double m);

/// Max |θ_a − θ_b| over all parameters; StructureError if layouts differ.
template <class T>
T max_parameter_diff(const Network<T>& a, const Network<T>& b);

/// FNV-1a over the raw parameter bytes; used to detect any mutation.
template <class T>
std::uint64_t parameter_hash(const Network<T>& net);

template <class T>
struct TriNetwork {
  Network<T> student;
  Network<T> teacher1;
  Network<T> teacher2;
  double m1;
  double m2;

  /// Student from a seeded init; both teachers start as copies of it.
  TriNetwork(const EncoderSpec& spec, SeededRng& rng, double m1, double m2);

  void init_teachers();
  void momentum_update();
};

extern template class Network<float>;
extern template class Network<double>;
extern template struct TriNetwork<float>;
extern template struct TriNetwork<double>;

}  // namespace msvq
