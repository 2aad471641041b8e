// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "MSVQCKPT"
//   u32       format version
//   u64       header length L
//   L bytes   JSON header: dtype, config echo, counters, RNG description,
//             normalisation statistics and the tensor manifest [{name, shape}]
//   payload   each manifest tensor as a flat little-endian f32 or f64 array,
//             in manifest order
#pragma once

#include <filesystem>
#include <stdexcept>

#include "msvq/trainer.hpp"

namespace msvq {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// Bad magic or unsupported format version.
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// File ends before the header or payload is complete.
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// Manifest disagrees with the architecture implied by the config echo.
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// The file cannot be opened or written.
class CheckpointIoError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path);

/// Restores every parameter, queue, optimizer buffer and counter. A checkpoint
/// written in the other precision is converted on load.
template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path);

/// Reads only the JSON header (config echo, counters, manifest).
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace msvq
