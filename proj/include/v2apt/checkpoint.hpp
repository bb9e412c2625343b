// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "v2apt/trainer.hpp"

namespace v2apt {

struct TensorRecord {
  std::string name;
  Precision dtype = Precision::f32;
  bool trainable = true;
  Shape shape;
  std::vector<double> values;  // widened; f32 records narrow back exactly
};

/// Everything needed to resume a run: config, parameters with their freeze
/// bits, optimizer moments and RNG cursors.
struct Checkpoint {
  RunConfig config;
  std::uint64_t step = 0;
  std::uint64_t total_steps = 0;
  std::vector<TensorRecord> tensors;
  std::uint64_t optimizer_steps = 0;
  std::vector<MomentBuffers> moments;
  std::vector<std::pair<std::string, RngCursor>> cursors;

  const TensorRecord* find(const std::string& name) const;
  FreezeMask freeze_mask() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian "V2AP" file: magic, u32 version, config text, u64 config
/// hash, step counters, tensor records, optimizer records, RNG cursors and a
/// CRC32 footer over everything before it.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Validates magic, version, CRC and config hash in that order; each failure
/// is a FormatError naming the field.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of a model, optionally with the trainer's optimizer and cursor.
template <typename T>
Checkpoint capture(const Model<T>& model, const RunConfig& config, const Trainer<T>* trainer = nullptr);

/// Rebuilds the model described by the checkpoint config and loads every
/// tensor and freeze bit.
template <typename T>
Model<T> restore_model(const Checkpoint& ckpt);

/// Resumes optimizer state, step counter and epsilon stream.
template <typename T>
void restore_trainer(Trainer<T>& trainer, const Checkpoint& ckpt);

}  // namespace v2apt
