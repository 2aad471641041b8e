// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msvq/image.hpp"

namespace msvq {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};
class RecordLengthError : public DataError {
 public:
  using DataError::DataError;
};
class LabelRangeError : public DataError {
 public:
  using DataError::DataError;
};

/// Images with class labels. Labels feed evaluation and analysis only.
struct LabeledImageDataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t class_count = 0;
  std::vector<float> pixels;  // M×C×H×W in [0,1]
  std::vector<std::int32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return channels * height * width; }
  Image image(std::size_t i) const;
  ImageBatch gather(std::span<const std::size_t> indices) const;
  std::vector<std::int32_t> gather_labels(std::span<const std::size_t> indices) const;
  LabeledImageDataset subset(std::span<const std::size_t> indices) const;
};

struct SynthSpec {
  std::size_t class_count = 4;
  std::size_t per_class = 128;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  /// Distinct streams draw distinct samples around the same class patterns
  /// (e.g. 0 = train, 1 = test).
  std::uint64_t sample_stream = 0;
};

/// Each class owns a smooth random base pattern (blurred white noise);
/// samples are clamp(base + N(0, σ²) pixel noise, 0, 1).
LabeledImageDataset synth_clusters(const SynthSpec& spec);

enum class Split { Train, Test };

/// Standard CIFAR-10 binary batches: records of 1 label byte + 3×1024 plane bytes.
/// Train reads data_batch_1..5.bin, test reads test_batch.bin.
LabeledImageDataset load_cifar10(const std::filesystem::path& dir, Split split,
                                 std::size_t chunk_bytes = 1 << 16);

/// Appends the records of one binary batch file to `out`.
void read_cifar10_file(const std::filesystem::path& file, LabeledImageDataset& out,
                       std::size_t chunk_bytes = 1 << 16);

/// First k indices of a seeded permutation, balanced across classes.
std::vector<std::size_t> stratified_subset(const LabeledImageDataset& ds, std::size_t k,
                                           std::uint64_t seed);

/// Seeded Fisher–Yates permutation of [0, m) keyed by (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t m, std::uint64_t seed, std::uint64_t epoch);

/// ⌊m/n⌋ full batches of the epoch permutation; the remainder is dropped.
std::vector<std::vector<std::size_t>> batches(std::size_t m, std::size_t n, std::uint64_t seed,
                                              std::uint64_t epoch);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats channel_stats(const LabeledImageDataset& ds);

}  // namespace msvq
