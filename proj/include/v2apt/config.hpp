// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace v2apt {

enum class Precision { f32, f64 };

/// Architecture hyperparameters. `prompt_tokens` is the per-layer token
/// budget k; `instance_tokens` of those come from the VAE decoder and the
/// remaining k - instance_tokens are static domain prompts.
struct ModelConfig {
  std::size_t layers = 4;
  std::size_t dim = 48;
  std::size_t heads = 3;
  std::size_t mlp_ratio = 4;
  std::size_t patch_size = 4;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t num_classes = 4;
  std::size_t prompt_tokens = 8;
  std::size_t instance_tokens = 4;
  std::size_t latent_dim = 8;
  std::size_t vae_hidden = 64;
  /// How the VAE input X is formed from the patch embeddings.
  std::string vae_input = "mean_pool";

  std::size_t domain_tokens() const { return prompt_tokens - instance_tokens; }
  std::size_t num_patches() const;
  std::size_t head_dim() const { return dim / heads; }
  bool uses_vae() const { return instance_tokens > 0; }

  /// Throws ConfigError on any inconsistent field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  double kl_beta = 1e-3;
  double kl_warmup_frac = 0.1;
  std::size_t pretrain_steps = 300;
  std::size_t tune_steps = 200;
  double train_frac = 0.8;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  Precision precision = Precision::f32;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything a CLI run needs. Text form: one "key = value" line per field,
/// keys sorted; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }

  std::string to_text() const;
  /// Missing keys keep their defaults.
  static RunConfig from_text(std::string_view text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  /// FNV-1a of the canonical text.
  std::uint64_t hash() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Desk-scale gradient-check model: N=2, d=16, k=4, k_inst=2, z=4.
RunConfig tiny_config();

std::string_view precision_name(Precision p);

}  // namespace v2apt
