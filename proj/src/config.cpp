// SPDX-License-Identifier: Apache-2.0
#include "msvq/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace msvq {

namespace {

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size >= 1, "pretraining.batch_size", "must be at least 1");
  require(queue_size >= 1, "pretraining.queue_size", "must be at least 1");
  require(batch_size <= queue_size, "pretraining.batch_size",
          "batch size " + std::to_string(batch_size) + " exceeds queue size " + std::to_string(queue_size));
  require(base_lr >= 0.0, "pretraining.base_lr", "must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, "pretraining.momentum", "must lie in [0,1)");
  require(weight_decay >= 0.0, "pretraining.weight_decay", "must be non-negative");
  require(m1 >= 0.0 && m1 <= 1.0, "pretraining.m1", "must lie in [0,1]");
  require(m2 >= 0.0 && m2 <= 1.0, "pretraining.m2", "must lie in [0,1]");
  require(temps.student > 0.0, "pretraining.tau_s", "must be positive");
  require(temps.teacher > 0.0, "pretraining.tau_t", "must be positive");
  require(temps.teacher < temps.student, "pretraining.tau_t",
          "teacher temperature " + std::to_string(temps.teacher) +
              " must be strictly below student temperature " + std::to_string(temps.student) +
              " (teacher targets must be sharper than student predictions)");
  require(data.kind == "synthetic" || data.kind == "cifar10", "data.kind",
          "expected synthetic or cifar10, got '" + data.kind + "'");
  if (data.kind == "synthetic") {
    require(data.synth.class_count >= 2, "data.classes", "must be at least 2");
    require(data.synth.per_class >= 1, "data.per_class", "must be at least 1");
    require(data.synth.noise_sigma >= 0.0, "data.noise_sigma", "must be non-negative");
    require(data.synth.height >= 4 && data.synth.width >= 4, "data.height", "images must be at least 4x4");
  } else {
    require(!data.cifar_dir.empty(), "data.cifar_dir", "required for cifar10");
  }
  require(encoder.feature_dim >= 1, "encoder.feature_dim", "must be positive");
  require(encoder.hidden_dim >= 1, "encoder.hidden_dim", "must be positive");
  require(encoder.embed_dim >= 1, "encoder.embed_dim", "must be positive");
  require(encoder.conv_channels >= 1, "encoder.conv_channels", "must be positive");
  require(probe.batch_size >= 1, "finetuning.batch_size", "must be at least 1");
  require(probe.base_lr >= 0.0, "finetuning.base_lr", "must be non-negative");
  require(probe.momentum >= 0.0 && probe.momentum < 1.0, "finetuning.momentum", "must lie in [0,1)");
  require(probe.weight_decay >= 0.0, "finetuning.weight_decay", "must be non-negative");
  require(knn_k >= 1, "eval.knn_k", "must be at least 1");
  require(knn_temperature > 0.0, "eval.knn_temperature", "must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"pretraining",
       {{"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"warmup_epochs", c.warmup_epochs},
        {"base_lr", c.base_lr},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"m1", c.m1},
        {"m2", c.m2},
        {"tau_s", c.temps.student},
        {"tau_t", c.temps.teacher},
        {"queue_size", c.queue_size},
        {"method", to_string(c.method)},
        {"seed", c.seed}}},
      {"finetuning",
       {{"epochs", c.probe.epochs},
        {"batch_size", c.probe.batch_size},
        {"base_lr", c.probe.base_lr},
        {"momentum", c.probe.momentum},
        {"weight_decay", c.probe.weight_decay}}},
      {"data",
       {{"kind", c.data.kind},
        {"classes", c.data.synth.class_count},
        {"per_class", c.data.synth.per_class},
        {"test_per_class", c.data.test_per_class},
        {"channels", c.data.synth.channels},
        {"height", c.data.synth.height},
        {"width", c.data.synth.width},
        {"noise_sigma", c.data.synth.noise_sigma},
        {"seed", c.data.synth.seed},
        {"cifar_dir", c.data.cifar_dir},
        {"subset", c.data.subset}}},
      {"encoder",
       {{"backbone", to_string(c.encoder.kind)},
        {"channels", c.encoder.channels},
        {"height", c.encoder.height},
        {"width", c.encoder.width},
        {"conv_channels", c.encoder.conv_channels},
        {"feature_dim", c.encoder.feature_dim},
        {"hidden_dim", c.encoder.hidden_dim},
        {"embed_dim", c.encoder.embed_dim}}},
      {"eval", {{"knn_k", c.knn_k}, {"knn_temperature", c.knn_temperature}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* section, const char* key, auto& dst) {
    if (j.contains(section) && j[section].contains(key)) {
      try {
        j[section][key].get_to(dst);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(section) + "." + key, e.what());
      }
    }
  };
  get("pretraining", "epochs", c.epochs);
  get("pretraining", "batch_size", c.batch_size);
  get("pretraining", "warmup_epochs", c.warmup_epochs);
  get("pretraining", "base_lr", c.base_lr);
  get("pretraining", "momentum", c.momentum);
  get("pretraining", "weight_decay", c.weight_decay);
  get("pretraining", "m1", c.m1);
  get("pretraining", "m2", c.m2);
  get("pretraining", "tau_s", c.temps.student);
  get("pretraining", "tau_t", c.temps.teacher);
  get("pretraining", "queue_size", c.queue_size);
  std::string method = to_string(c.method);
  get("pretraining", "method", method);
  try {
    c.method = method_from_string(method);
  } catch (const ParameterError& e) {
    throw ConfigError("pretraining.method", e.what());
  }
  get("pretraining", "seed", c.seed);
  get("finetuning", "epochs", c.probe.epochs);
  get("finetuning", "batch_size", c.probe.batch_size);
  get("finetuning", "base_lr", c.probe.base_lr);
  get("finetuning", "momentum", c.probe.momentum);
  get("finetuning", "weight_decay", c.probe.weight_decay);
  get("data", "kind", c.data.kind);
  get("data", "classes", c.data.synth.class_count);
  get("data", "per_class", c.data.synth.per_class);
  get("data", "test_per_class", c.data.test_per_class);
  get("data", "channels", c.data.synth.channels);
  get("data", "height", c.data.synth.height);
  get("data", "width", c.data.synth.width);
  get("data", "noise_sigma", c.data.synth.noise_sigma);
  get("data", "seed", c.data.synth.seed);
  get("data", "cifar_dir", c.data.cifar_dir);
  get("data", "subset", c.data.subset);
  std::string backbone = to_string(c.encoder.kind);
  get("encoder", "backbone", backbone);
  try {
    c.encoder.kind = backbone_kind_from_string(backbone);
  } catch (const ParameterError& e) {
    throw ConfigError("encoder.backbone", e.what());
  }
  get("encoder", "channels", c.encoder.channels);
  get("encoder", "height", c.encoder.height);
  get("encoder", "width", c.encoder.width);
  get("encoder", "conv_channels", c.encoder.conv_channels);
  get("encoder", "feature_dim", c.encoder.feature_dim);
  get("encoder", "hidden_dim", c.encoder.hidden_dim);
  get("encoder", "embed_dim", c.encoder.embed_dim);
  get("eval", "knn_k", c.knn_k);
  get("eval", "knn_temperature", c.knn_temperature);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(" \t\r") - b + 1));
}

nlohmann::json typed_value(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  std::int64_t i = 0;
  auto [pi, ei] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (ei == std::errc() && pi == v.data() + v.size()) return i;
  double d = 0;
  auto [pd, ed] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ed == std::errc() && pd == v.data() + v.size()) return d;
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

void set_key(nlohmann::json& tree, const std::string& section, const std::string& key, const std::string& value) {
  const nlohmann::json schema = TrainConfig{};
  const std::string field = section + "." + key;
  if (!schema.contains(section)) throw ConfigError(field, "unknown section '" + section + "'");
  if (!schema[section].contains(key)) throw ConfigError(field, "unknown key");
  const nlohmann::json& def = schema[section][key];
  nlohmann::json v = typed_value(value);
  if (def.is_number_unsigned() && !v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(field, "expected a non-negative integer, got '" + value + "'");
  }
  if (def.is_number_float() && !v.is_number()) throw ConfigError(field, "expected a number, got '" + value + "'");
  if (def.is_string() && !v.is_string()) v = value;
  if (def.is_number_float()) v = v.get<double>();
  tree[section][key] = v;
}

}  // namespace

nlohmann::json parse_config_text(const std::string& text, const std::string& origin) {
  nlohmann::json tree = nlohmann::json::object();
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    const std::string where = origin + ":" + std::to_string(lineno);
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError(where, "unterminated section header");
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected key = value");
    if (section.empty()) throw ConfigError(where, "key outside of any [section]");
    set_key(tree, section, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return tree;
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const std::string key = trim(assignment.substr(0, eq));
  const auto dot = key.find('.');
  if (eq == std::string::npos || dot == std::string::npos) {
    throw ConfigError(key, "override must look like section.key=value");
  }
  set_key(tree, key.substr(0, dot), key.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

TrainConfig resolve_config(const nlohmann::json& tree) {
  TrainConfig cfg = tree.get<TrainConfig>();
  cfg.validate();
  return cfg;
}

nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), path.string());
}

}  // namespace msvq
