// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "msvq/data.hpp"
#include "msvq/model.hpp"
#include "msvq/relation.hpp"

namespace msvq {

/// Invalid configuration value; `field` is the dotted key at fault.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | cifar10
  SynthSpec synth;
  std::size_t test_per_class = 64;
  std::string cifar_dir;
  std::size_t subset = 0;  // stratified subset size for cifar10 train split; 0 = all
};

/// Linear-probe (fine-tuning) hyperparameters.
struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double base_lr = 1.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 256;
  double base_lr = 0.06;
  std::size_t warmup_epochs = 5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double m1 = 0.99;
  double m2 = 0.95;
  Temperatures temps{0.1, 0.04};
  std::size_t queue_size = 4096;
  Method method = Method::MSVQ;
  std::uint64_t seed = 0;
  DatasetSpec data;
  EncoderSpec encoder;
  ProbeConfig probe;
  std::size_t knn_k = 200;
  double knn_temperature = 0.07;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Parses flat "key = value" text grouped under [pretraining], [finetuning],
/// [data], [encoder] and [eval] headers ('#' starts a comment). Unknown keys
/// and ill-typed values are rejected. Returns a partial tree; absent keys keep
/// their defaults when resolved.
nlohmann::json parse_config_text(const std::string& text, const std::string& origin = "<config>");
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies "section.key=value" on top of a parsed tree.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// Defaults, then the tree; validated.
TrainConfig resolve_config(const nlohmann::json& tree);

}  // namespace msvq
