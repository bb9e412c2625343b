// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "v2apt/prompts.hpp"

namespace v2apt {

/// Diagonal Gaussian N(mu, exp(logvar)); [B, z] (or [z] for one input).
template <typename T>
struct LatentDistribution {
  Tensor<T> mu;
  Tensor<T> logvar;
};

inline constexpr double kLogvarClamp = 10.0;

enum class SampleMode { train, eval };

/// Encoder d -> h -> 2z and decoder z -> h -> N·k_inst·d, GELU hidden layers.
template <typename T>
struct VaeParams {
  Tensor<T> enc_fc1_weight, enc_fc1_bias;
  Tensor<T> enc_fc2_weight, enc_fc2_bias;
  Tensor<T> dec_fc1_weight, dec_fc1_bias;
  Tensor<T> dec_fc2_weight, dec_fc2_bias;

  static VaeParams init(const ModelConfig& config, Rng& rng);
  void collect(ParameterList<T>& out) const;
};

/// Per-layer instance prompts, each [B, k_inst, d].
template <typename T>
using InstancePrompts = std::vector<Tensor<T>>;

/// Per-layer [Pinst; Pdom], each [B, k, d].
template <typename T>
using ComposedPrompts = std::vector<Tensor<T>>;

/// Mean over the patch rows: [B, P, d] -> [B, d] or [P, d] -> [d].
template <typename T>
Tensor<T> pool_input_embeddings(const Tensor<T>& embeddings);

/// First z outputs are mu, last z are logvar (clamped to ±kLogvarClamp).
template <typename T>
LatentDistribution<T> encode(const Tensor<T>& x, const VaeParams<T>& params,
                             const ModelConfig& config);

/// Train mode: mu + exp(logvar / 2)·eps with eps drawn from `rng` as a tape
/// constant. Eval mode: mu itself; `rng` may be null.
template <typename T>
Tensor<T> reparameterize(const LatentDistribution<T>& dist, Rng* rng, SampleMode mode);

/// Decodes all N layers' instance prompts in one shot (layer-major reshape).
/// A batched [B, z] latent gives [B, k_inst, d] per layer, a single [z] gives
/// [k_inst, d].
template <typename T>
InstancePrompts<T> decode(const Tensor<T>& z, const VaeParams<T>& params, const ModelConfig& config);

/// ½ Σ_j (mu_j² + exp(logvar_j) - 1 - logvar_j), summed over latent dims and
/// averaged over the batch. Scalar.
template <typename T>
Tensor<T> kl_divergence(const LatentDistribution<T>& dist);

/// Concatenates instance prompts (first) with the batch-broadcast domain
/// prompts. `instance` may be empty when k_inst = 0. Throws ConfigError when
/// k_inst + k_dom differs from the configured budget.
template <typename T>
ComposedPrompts<T> compose_prompts(const InstancePrompts<T>& instance, const PromptSet<T>& domain,
                                   std::size_t batch, const ModelConfig& config);

}  // namespace v2apt
