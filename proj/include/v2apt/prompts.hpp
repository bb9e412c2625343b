// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "v2apt/vit.hpp"

namespace v2apt {

/// Static per-layer domain prompts, each [k_dom, d].
template <typename T>
struct PromptSet {
  std::vector<Tensor<T>> layers;

  void collect(ParameterList<T>& out) const;
};

/// Xavier-style uniform init in [-v, v], v = sqrt(6 / (d + d)).
template <typename T>
PromptSet<T> init_domain_prompts(const ModelConfig& config, Rng& rng);

/// Token bookkeeping for one layer input: [CLS | prompts | patches].
struct SequenceLayout {
  std::size_t prompt_count = 0;
  std::size_t patch_count = 0;

  static constexpr std::size_t cls_offset() { return 0; }
  static constexpr std::size_t prompt_offset() { return 1; }
  std::size_t patch_offset() const { return 1 + prompt_count; }
  std::size_t length() const { return 1 + prompt_count + patch_count; }
};

template <typename T>
struct LayerResult {
  Tensor<T> output;  // [B, S, d]
  SequenceLayout layout;
};

/// Repeats a [k, d] tensor over a batch: [B, k, d].
template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& rows, std::size_t batch);

/// Builds [CLS; P¹; E] and runs encoder layer 0. `prompts` is [B, k, d],
/// `patches` is [B, P, d], `cls` is the [1, d] token.
template <typename T>
LayerResult<T> inject_first_layer(const Tensor<T>& prompts, const Tensor<T>& patches,
                                  const Tensor<T>& cls, const BackboneParams<T>& backbone,
                                  const ModelConfig& config);

/// Splices fresh prompts into a stripped [B, 1 + P, d] sequence and runs
/// encoder layer `layer_idx`.
template <typename T>
LayerResult<T> inject_deep(const Tensor<T>& prompts, const Tensor<T>& stripped,
                           std::size_t layer_idx, const BackboneParams<T>& backbone,
                           const ModelConfig& config);

/// Drops the prompt segment, keeping CLS and patch tokens in order.
template <typename T>
Tensor<T> strip_prompt_tokens(const Tensor<T>& sequence, const SequenceLayout& layout);

}  // namespace v2apt
