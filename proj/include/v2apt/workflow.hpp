// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "v2apt/checkpoint.hpp"
#include "v2apt/gradcheck.hpp"

namespace v2apt {

/// vpt: domain prompts only (k_inst forced to 0). v2apt: instance + domain
/// prompts as configured. head: no prompts at all (k = 0).
enum class Method { vpt, v2apt, head };

Method parse_method(std::string_view name);
std::string_view method_name(Method m);

/// Config actually trained for a method.
ModelConfig method_config(ModelConfig config, Method method);
/// Pretraining trains a plain ViT (k = 0) with every parameter trainable.
ModelConfig pretrain_config(ModelConfig config);

/// Throws ConfigError naming the first backbone field that differs.
void check_backbone_compatible(const ModelConfig& backbone, const ModelConfig& target);

struct RunOptions {
  /// Stop (and checkpoint) after this many completed steps.
  std::optional<std::uint64_t> stop_at;
  /// Continue from a checkpoint written by an interrupted run.
  const Checkpoint* resume = nullptr;
  std::ostream* metrics = nullptr;
};

struct RunOutcome {
  Checkpoint checkpoint;
  std::vector<StepMetrics> history;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

template <typename T>
RunOutcome run_pretrain(const RunConfig& config, const Dataset& train, const Dataset* test,
                        const RunOptions& options = {});

/// Loads the backbone tensors of `backbone`, re-initializes the head for the
/// target class count, freezes the backbone and trains prompts (plus VAE) and
/// head.
template <typename T>
RunOutcome run_tune(const RunConfig& config, const Checkpoint& backbone, Method method,
                    const Dataset& train, const Dataset* test, const RunOptions& options = {});

/// Finite-difference check of the full training loss (task CE + beta·KL,
/// with a fixed epsilon draw) against every parameter of a 64-bit model
/// built from `config`, on a small random batch.
struct ModelCheckOptions {
  double eps = 1e-6;
  double tol = 1e-4;
  double beta = 0.5;
  std::size_t batch = 3;
  std::uint64_t seed = 0;
  /// Check only the parameters that remain trainable after freezing.
  bool freeze = false;
};

CheckReport gradcheck_model(const ModelConfig& config, const ModelCheckOptions& options = {});

}  // namespace v2apt
