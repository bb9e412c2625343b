// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "v2apt/config.hpp"
#include "v2apt/tensor.hpp"

namespace v2apt {

class Rng;

/// A named parameter leaf. `trainable` is the freeze-mask bit.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

template <typename T>
struct EncoderLayerParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> qkv_weight, qkv_bias;    // [d, 3d], [3d]
  Tensor<T> proj_weight, proj_bias;  // [d, d], [d]
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> fc1_weight, fc1_bias;  // [d, r·d]
  Tensor<T> fc2_weight, fc2_bias;  // [r·d, d]
};

template <typename T>
struct BackboneParams {
  Tensor<T> patch_weight;  // [p·p·c, d]
  Tensor<T> patch_bias;    // [d]
  Tensor<T> pos_embed;     // [num_patches, d]
  Tensor<T> cls_token;     // [1, d]
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> head_weight;  // [d, C]
  Tensor<T> head_bias;    // [C]

  static BackboneParams init(const ModelConfig& config, Rng& rng);
  /// Named handles; names under "backbone." are frozen by freeze_backbone,
  /// names under "head." are not.
  void collect(ParameterList<T>& out) const;
};

/// Images [B, H, W, C] (or a single [H, W, C]) to patch embeddings
/// [B, P, d] (or [P, d]) with positional embeddings added.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const BackboneParams<T>& params,
                      const ModelConfig& config);

/// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(·)). Tokens are
/// [B, S, d] or [S, d]; the output has the same shape.
template <typename T>
Tensor<T> encoder_layer_forward(std::size_t layer_idx, const Tensor<T>& tokens,
                                const BackboneParams<T>& params, const ModelConfig& config);

/// Linear head on the (already normalized) CLS output; [B, d] or [d].
template <typename T>
Tensor<T> classify(const Tensor<T>& cls_out, const BackboneParams<T>& params);

/// Names of the frozen parameters.
struct FreezeMask {
  std::vector<std::string> frozen;

  bool contains(const std::string& name) const;
};

/// Marks every "backbone." parameter non-trainable and stops it from
/// requiring grad. Idempotent.
template <typename T>
FreezeMask freeze_backbone(ParameterList<T>& params);

/// Xavier/Glorot uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng);

}  // namespace v2apt
