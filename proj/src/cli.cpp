// SPDX-License-Identifier: Apache-2.0
#include "msvq/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "msvq/analysis.hpp"
#include "msvq/checkpoint.hpp"
#include "msvq/evalkit.hpp"
#include "msvq/trainer.hpp"

namespace msvq {

namespace fs = std::filesystem;

nlohmann::json to_json(const RunManifest& m) {
  return nlohmann::json{{"command", m.command},
                        {"config", m.config},
                        {"seed", m.seed},
                        {"precision", m.precision},
                        {"artifacts", {{"checkpoints", m.checkpoints}, {"metrics", m.metrics}, {"reports", m.reports}}},
                        {"tool_version", m.tool_version}};
}

void write_manifest(const RunManifest& m, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write " + (dir / "manifest.json").string());
  out << to_json(m).dump(2) << "\n";
  if (!out) throw std::ios_base::failure("write failed for " + (dir / "manifest.json").string());
}

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<std::size_t> epochs;
  std::string out_dir;
  std::string checkpoint;
  std::string resume;
  std::string mode = "knn";
  std::optional<std::size_t> k;
  std::string precision = "f32";
  std::vector<std::string> overrides;
};

nlohmann::json config_tree(const Options& o, const nlohmann::json& base) {
  nlohmann::json tree = base;
  if (!o.config_path.empty()) tree.merge_patch(read_config_file(o.config_path));
  for (const auto& kv : o.overrides) apply_override(tree, kv);
  if (o.seed) tree["pretraining"]["seed"] = *o.seed;
  if (o.method) tree["pretraining"]["method"] = *o.method;
  if (o.epochs) tree["pretraining"]["epochs"] = *o.epochs;
  return tree;
}

std::string write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << j.dump(2) << "\n";
  return path.string();
}

template <class T>
int train_command(const Options& o) {
  TrainConfig cfg = resolve_config(config_tree(o, nlohmann::json::object()));
  const DatasetPair data = load_datasets(cfg.data);
  cfg = resolve_for_dataset(cfg, data.train);
  if (data.train.size() < cfg.batch_size) {
    throw ConfigError("pretraining.batch_size", "larger than the training set (" +
                                                    std::to_string(data.train.size()) + " images)");
  }
  const std::size_t steps_per_epoch = data.train.size() / cfg.batch_size;

  const fs::path dir = o.out_dir.empty() ? fs::path("run") : fs::path(o.out_dir);
  RunManifest manifest;
  manifest.command = "train";
  manifest.config = cfg;
  manifest.seed = cfg.seed;
  manifest.precision = o.precision;
  manifest.metrics = (dir / "metrics.jsonl").string();
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", e);
    manifest.checkpoints.push_back((dir / "checkpoints" / name).string());
  }
  manifest.checkpoints.push_back((dir / "checkpoints" / "final.ckpt").string());
  write_manifest(manifest, dir);
  fs::create_directories(dir / "checkpoints");

  TrainState<T> state = o.resume.empty()
                            ? TrainState<T>::initial(cfg, steps_per_epoch, channel_stats(data.train))
                            : load_checkpoint<T>(o.resume);
  if (!o.resume.empty()) {
    if (o.epochs) state.config.epochs = *o.epochs;
    if (state.steps_per_epoch != steps_per_epoch) {
      throw ConfigError("data", "resumed checkpoint expects " + std::to_string(state.steps_per_epoch) +
                                    " steps per epoch, dataset gives " + std::to_string(steps_per_epoch));
    }
  }

  std::ofstream metrics(manifest.metrics, o.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::ios_base::failure("cannot write " + manifest.metrics);
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) { metrics << to_json(m).dump() << "\n"; };
  hooks.on_epoch = [&](std::size_t epoch) {
    metrics.flush();
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch);
    save_checkpoint(state, dir / "checkpoints" / name);
    std::cerr << "epoch " << epoch << "/" << state.config.epochs << " done\n";
  };
  train(state, data.train, hooks);
  metrics.flush();
  save_checkpoint(state, dir / "checkpoints" / "final.ckpt");
  std::cout << (dir / "checkpoints" / "final.ckpt").string() << "\n";
  return kExitOk;
}

/// Dataset for eval/analyze: the checkpoint's data section, with overrides.
template <class T>
std::pair<TrainState<T>, DatasetPair> open_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("checkpoint", "--checkpoint is required");
  if (!fs::exists(o.checkpoint)) throw CheckpointIoError("checkpoint not found: " + o.checkpoint);
  TrainState<T> state = load_checkpoint<T>(o.checkpoint);
  nlohmann::json base = state.config;
  TrainConfig cfg = resolve_config(config_tree(o, base));
  state.config.data = cfg.data;
  state.config.probe = cfg.probe;
  state.config.knn_k = cfg.knn_k;
  state.config.knn_temperature = cfg.knn_temperature;
  DatasetPair data = load_datasets(state.config.data);
  const EncoderSpec& enc = state.config.encoder;
  if (data.train.channels != enc.channels || data.train.height != enc.height || data.train.width != enc.width) {
    throw ConfigError("data", "dataset images do not match the checkpoint encoder input " +
                                  std::to_string(enc.channels) + "x" + std::to_string(enc.height) + "x" +
                                  std::to_string(enc.width));
  }
  return {std::move(state), std::move(data)};
}

template <class T>
int eval_command(const Options& o) {
  auto [state, data] = open_checkpoint<T>(o);
  const auto& net = state.nets.student;
  const auto [train, test] = extract_bank_pair(net, data.train, data.test, state.normalization);
  EvalReport report;
  report.method = to_string(state.config.method);
  report.dataset = state.config.data.kind;
  report.mode = o.mode;
  report.class_count = data.train.class_count;
  report.train_size = train.size();
  report.test_size = test.size();
  if (o.mode == "knn") {
    report.k = o.k.value_or(state.config.knn_k);
    report.accuracy = knn_evaluate(train, test, {report.k, state.config.knn_temperature, Vote::Weighted});
  } else if (o.mode == "linear") {
    report.accuracy = linear_probe(train, test, report.class_count, ProbeOptions::from(state.config.probe, state.config.seed));
  } else {
    throw ConfigError("mode", "expected knn or linear, got '" + o.mode + "'");
  }
  const nlohmann::json j = to_json(report);
  if (!o.out_dir.empty()) {
    RunManifest manifest;
    manifest.command = "eval";
    manifest.config = state.config;
    manifest.seed = state.config.seed;
    manifest.precision = o.precision;
    manifest.checkpoints = {o.checkpoint};
    manifest.reports = {(fs::path(o.out_dir) / "eval_report.json").string()};
    write_manifest(manifest, o.out_dir);
    write_json(j, manifest.reports[0]);
  }
  std::cout << j.dump() << "\n";
  return kExitOk;
}

template <class T>
int analyze_command(const Options& o) {
  auto [state, data] = open_checkpoint<T>(o);
  const FalseNegativeReport report = analyze_false_negatives(state, data.train, o.k.value_or(5));
  const nlohmann::json j = to_json(report);
  if (!o.out_dir.empty()) {
    RunManifest manifest;
    manifest.command = "analyze";
    manifest.config = state.config;
    manifest.seed = state.config.seed;
    manifest.precision = o.precision;
    manifest.checkpoints = {o.checkpoint};
    manifest.reports = {(fs::path(o.out_dir) / "fn_report.json").string()};
    write_manifest(manifest, o.out_dir);
    write_json(j, manifest.reports[0]);
  }
  std::cout << j.dump() << "\n";
  return kExitOk;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what();
    return kExitNumeric;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitIo;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Multi-view, multi-queue relational self-supervised training"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Config file ([pretraining], [finetuning], [data], [encoder], [eval])");
    sub->add_option("--seed", o.seed, "Root seed");
    sub->add_option("--out-dir", o.out_dir, "Run directory");
    sub->add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("overrides", o.overrides, "section.key=value overrides");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Pretrain student and teachers");
  common(train_cmd);
  train_cmd->add_option("--method", o.method, "moco, ressl, msv, mq or msvq");
  train_cmd->add_option("--epochs", o.epochs, "Pretraining epochs");
  train_cmd->add_option("--resume", o.resume, "Continue from a checkpoint");

  CLI::App* eval_cmd = app.add_subcommand("eval", "KNN or linear evaluation of a checkpoint");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--mode", o.mode, "knn or linear");
  eval_cmd->add_option("--k", o.k, "Neighbours for knn");

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "False-negative counts in teacher soft labels");
  common(analyze_cmd);
  analyze_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  analyze_cmd->add_option("--k", o.k, "Top-k cut-off (default 5)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  const bool f64 = o.precision == "f64";
  return guarded([&] {
    if (train_cmd->parsed()) return f64 ? train_command<double>(o) : train_command<float>(o);
    if (eval_cmd->parsed()) return f64 ? eval_command<double>(o) : eval_command<float>(o);
    return f64 ? analyze_command<double>(o) : analyze_command<float>(o);
  });
}

}  // namespace msvq
