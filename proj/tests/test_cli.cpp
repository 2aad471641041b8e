// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "msvq/checkpoint.hpp"
#include "msvq/cli.hpp"
#include "msvq/evalkit.hpp"

using namespace msvq;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kTiny = {
    "pretraining.batch_size=8", "pretraining.queue_size=16", "pretraining.warmup_epochs=1",
    "data.per_class=4",         "data.test_per_class=4",     "data.height=8",
    "data.width=8",             "encoder.conv_channels=4",   "encoder.feature_dim=8",
    "encoder.hidden_dim=8",     "encoder.embed_dim=8",       "eval.knn_k=4",
    "finetuning.epochs=2"};

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "msvq_cli_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Result {
  int code;
  std::string out;
};

Result run(std::vector<std::string> args, bool tiny = true) {
  if (tiny) args.insert(args.end(), kTiny.begin(), kTiny.end());
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run_cli(args);
  std::string out = testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  return {code, out};
}

fs::path train_tiny(const fs::path& dir, const std::string& epochs = "2", const std::string& method = "msvq") {
  const Result r = run({"train", "--epochs", epochs, "--method", method, "--out-dir", dir.string()});
  EXPECT_EQ(r.code, kExitOk);
  return dir / "checkpoints" / "final.ckpt";
}

}  // namespace

TEST(CliTrain, UnsharpenedTemperaturesRejected) {
  const fs::path dir = fresh_dir("tau");
  EXPECT_EQ(run({"train", "--out-dir", dir.string(), "pretraining.tau_t=0.2", "pretraining.tau_s=0.1"}).code,
            kExitConfig);
  EXPECT_FALSE(fs::exists(dir / "manifest.json"));
}

TEST(CliTrain, OtherConfigErrors) {
  const fs::path dir = fresh_dir("cfg");
  EXPECT_EQ(run({"train", "--out-dir", dir.string(), "--method", "byol"}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--out-dir", dir.string(), "pretraining.queue_size=4"}, false).code, kExitConfig);
  EXPECT_EQ(run({"train", "--out-dir", dir.string(), "nosuch.key=1"}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--config", (dir / "missing.cfg").string()}).code, kExitIo);
}

TEST(CliTrain, SmokeRunEmitsArtifacts) {
  const fs::path dir = fresh_dir("smoke");
  const fs::path ckpt = train_tiny(dir);
  EXPECT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "epoch_0001.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoints" / "epoch_0002.ckpt"));
  std::ifstream metrics(dir / "metrics.jsonl");
  std::size_t n = 0;
  for (std::string line; std::getline(metrics, line); ++n) {
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("loss"));
    EXPECT_TRUE(j.contains("lr"));
  }
  EXPECT_EQ(n, 2u * (16 / 8));
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m.at("command"), "train");
  EXPECT_EQ(m.at("tool_version"), kToolVersion);
  EXPECT_EQ(m.at("config").at("pretraining").at("epochs"), 2);
  EXPECT_EQ(m.at("config").at("pretraining").at("queue_size"), 16);
}

TEST(CliTrain, ManifestPrecedesOtherArtifacts) {
  const fs::path dir = fresh_dir("order");
  train_tiny(dir);
  const auto manifest_time = fs::last_write_time(dir / "manifest.json");
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) EXPECT_LE(manifest_time, e.last_write_time()) << e.path();
}

TEST(CliTrain, MethodFlagSelectsObjective) {
  const fs::path dir = fresh_dir("ressl");
  const fs::path ckpt = train_tiny(dir, "1", "ressl");
  EXPECT_EQ(read_checkpoint_header(ckpt).at("config").at("pretraining").at("method"), "ressl");
  // Only the second-queue objectives emit a P42 entropy.
  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  std::getline(metrics, line);
  const json j = json::parse(line);
  EXPECT_FALSE(j.contains("teacher_entropy_42") && !j.at("teacher_entropy_42").is_null());
}

TEST(CliTrain, ConfigFileWithOverridePrecedence) {
  const fs::path dir = fresh_dir("file");
  std::ofstream(dir / "run.cfg") << "# tiny\n[pretraining]\nepochs = 3\nseed = 11\n[data]\nnoise_sigma = 0.2\n";
  const Result r = run({"train", "--config", (dir / "run.cfg").string(), "--out-dir", (dir / "run").string(),
                        "pretraining.epochs=1"});
  ASSERT_EQ(r.code, kExitOk);
  const json m = json::parse(slurp(dir / "run" / "manifest.json"));
  EXPECT_EQ(m.at("config").at("pretraining").at("epochs"), 1);
  EXPECT_EQ(m.at("seed"), 11);
  EXPECT_EQ(m.at("config").at("data").at("noise_sigma"), 0.2);
}

TEST(CliTrain, ResumeContinuesToTargetEpochs) {
  const fs::path dir = fresh_dir("resume");
  train_tiny(dir, "2");
  const fs::path first = dir / "checkpoints" / "epoch_0001.ckpt";
  const fs::path dir2 = fresh_dir("resume2");
  ASSERT_EQ(run({"train", "--resume", first.string(), "--epochs", "2", "--out-dir", dir2.string(),
                 "--precision", "f32"}).code,
            kExitOk);
  EXPECT_EQ(read_checkpoint_header(dir2 / "checkpoints" / "final.ckpt").at("epoch"), 2);
}

TEST(CliEval, KnnAndLinearReports) {
  const fs::path dir = fresh_dir("eval");
  const fs::path ckpt = train_tiny(dir, "1");
  const Result knn = run({"eval", "--checkpoint", ckpt.string(), "--out-dir", (dir / "knn").string()});
  ASSERT_EQ(knn.code, kExitOk);
  const json j = json::parse(slurp(dir / "knn" / "eval_report.json"));
  EXPECT_EQ(j.at("mode"), "knn");
  EXPECT_EQ(j.at("K"), 4);
  EXPECT_EQ(j.at("test_size"), 16);
  EXPECT_EQ(json::parse(knn.out), j);
  const Result lin = run({"eval", "--checkpoint", ckpt.string(), "--mode", "linear"});
  ASSERT_EQ(lin.code, kExitOk);
  const json l = json::parse(lin.out);
  EXPECT_TRUE(l.at("K").is_null());
  EXPECT_GE(l.at("accuracy").get<double>(), 0.0);
  EXPECT_LE(l.at("accuracy").get<double>(), 1.0);
}

TEST(CliEval, ProbeDefaultsFollowFineTuningBlock) {
  const TrainConfig c;
  EXPECT_EQ(c.probe.epochs, 100u);
  EXPECT_EQ(c.probe.base_lr, 1.0);
  const ProbeOptions o = ProbeOptions::from(c.probe, 0);
  EXPECT_EQ(o.epochs, 100u);
  EXPECT_EQ(o.lr, 1.0);
  EXPECT_EQ(o.momentum, 0.9);
  EXPECT_EQ(o.weight_decay, 0.0);
}

TEST(CliEval, MissingCheckpointIsIoError) {
  EXPECT_EQ(run({"eval", "--checkpoint", "/nonexistent/final.ckpt"}).code, kExitIo);
  EXPECT_EQ(run({"analyze", "--checkpoint", "/nonexistent/final.ckpt"}).code, kExitIo);
}

TEST(CliEval, IncompatibleGeometryRejected) {
  const fs::path dir = fresh_dir("geom");
  const fs::path ckpt = train_tiny(dir, "1");
  EXPECT_NE(run({"eval", "--checkpoint", ckpt.string(), "data.height=16", "data.width=16"}, false).code, kExitOk);
}

TEST(CliAnalyze, ZeroKGivesZeroCounts) {
  const fs::path dir = fresh_dir("k0");
  const fs::path ckpt = train_tiny(dir, "1");
  const Result r = run({"analyze", "--checkpoint", ckpt.string(), "--k", "0"}, false);
  ASSERT_EQ(r.code, kExitOk);
  const json j = json::parse(r.out);
  for (const char* k : {"fn_top5_P21", "fn_top5_P31", "fn_top5_P42", "fn_top5_all"}) EXPECT_EQ(j.at(k), 0.0);
}

TEST(CliAnalyze, ReportSchemaIsExact) {
  const fs::path dir = fresh_dir("schema");
  const fs::path ckpt = train_tiny(dir, "1");
  const Result r = run({"analyze", "--checkpoint", ckpt.string(), "--out-dir", (dir / "an").string()}, false);
  ASSERT_EQ(r.code, kExitOk);
  const json j = json::parse(slurp(dir / "an" / "fn_report.json"));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"fn_top5_P21", "fn_top5_P31", "fn_top5_P42", "fn_top5_all", "step"}));
  EXPECT_TRUE(fs::exists(dir / "an" / "manifest.json"));
}

TEST(CliReproducibility, RerunsProduceIdenticalReports) {
  const fs::path a = fresh_dir("rep_a"), b = fresh_dir("rep_b");
  const fs::path ca = train_tiny(a, "2"), cb = train_tiny(b, "2");
  EXPECT_EQ(slurp(ca), slurp(cb));
  EXPECT_EQ(slurp(a / "manifest.json").size() > 0, true);
  EXPECT_EQ(run({"eval", "--checkpoint", ca.string()}, false).out, run({"eval", "--checkpoint", cb.string()}, false).out);
  EXPECT_EQ(run({"analyze", "--checkpoint", ca.string()}, false).out,
            run({"analyze", "--checkpoint", cb.string()}, false).out);
}

TEST(CliMisc, UnknownSubcommandIsConfigError) {
  EXPECT_EQ(run({"frobnicate"}, false).code, kExitConfig);
  EXPECT_EQ(run({"train", "--precision", "f16"}, false).code, kExitConfig);
}
