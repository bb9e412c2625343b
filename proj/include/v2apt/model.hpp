// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "v2apt/vae.hpp"

namespace v2apt {

/// Optional per-layer record of a forward pass.
template <typename T>
struct ForwardTrace {
  std::vector<std::size_t> layer_input_lengths;
  std::vector<Tensor<T>> layer_prompts;         // composed prompts entering layer i, [B, k, d]
  std::vector<Tensor<T>> layer_patch_outputs;   // patch tokens leaving layer i, [B, P, d]
  Tensor<T> patch_embeddings;                   // [B, P, d]
};

template <typename T>
struct ForwardOutput {
  Tensor<T> logits;  // [B, C]
  Tensor<T> kl;      // scalar; zero without a VAE
  std::optional<LatentDistribution<T>> latent;
};

/// Frozen-backbone ViT with deep prompts: VPT-deep when instance_tokens = 0,
/// plain ViT when prompt_tokens = 0, and VAE-generated instance prompts
/// composed with domain prompts otherwise.
template <typename T>
class Model {
 public:
  /// All parameters drawn from named sub-streams of Rng(seed).split("init").
  Model(const ModelConfig& config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  const BackboneParams<T>& backbone() const noexcept { return backbone_; }
  const PromptSet<T>& prompts() const noexcept { return prompts_; }
  const std::optional<VaeParams<T>>& vae() const noexcept { return vae_; }

  ParameterList<T>& parameters() noexcept { return params_; }
  const ParameterList<T>& parameters() const noexcept { return params_; }
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  const FreezeMask& freeze();
  const FreezeMask& freeze_mask() const noexcept { return mask_; }
  /// Restores a mask read from a checkpoint.
  void apply_freeze_mask(const FreezeMask& mask);

  /// Copies every "backbone." tensor from `source` (shapes must match).
  void copy_backbone_from(const ParameterList<T>& source);

  /// images: [B, H, W, C]. Train mode draws epsilon from `eps_rng`.
  ForwardOutput<T> forward(const Tensor<T>& images, SampleMode mode, Rng* eps_rng = nullptr,
                           ForwardTrace<T>* trace = nullptr) const;

 private:
  ModelConfig config_;
  BackboneParams<T> backbone_;
  PromptSet<T> prompts_;
  std::optional<VaeParams<T>> vae_;
  ParameterList<T> params_;
  FreezeMask mask_;
};

}  // namespace v2apt
