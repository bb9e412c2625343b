// SPDX-License-Identifier: Apache-2.0
#include "v2apt/prompts.hpp"

#include "v2apt/rng.hpp"

namespace v2apt {

template <typename T>
void PromptSet<T>::collect(ParameterList<T>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back({"prompts.domain." + std::to_string(i), layers[i], true});
  }
}

template <typename T>
PromptSet<T> init_domain_prompts(const ModelConfig& config, Rng& rng) {
  const double bound = xavier_bound(config.dim, config.dim);
  PromptSet<T> set;
  Rng stream = rng.split("prompts");
  for (std::size_t i = 0; i < config.layers; ++i) {
    set.layers.push_back(uniform_tensor<T>({config.domain_tokens(), config.dim}, bound, stream));
  }
  return set;
}

template <typename T>
Tensor<T> broadcast_rows(const Tensor<T>& rows, std::size_t batch) {
  if (rows.rank() != 2) throw ShapeError("broadcast_rows: expected [k, d], got " + shape_str(rows.shape()));
  const std::size_t k = rows.dim(0);
  std::vector<std::size_t> idx(batch * k);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % k;
  return reshape(embedding<T>(rows, idx), {batch, k, rows.dim(1)});
}

namespace {

template <typename T>
void require_tokens(const Tensor<T>& t, const char* what, std::size_t batch, std::size_t d) {
  if (t.rank() != 3 || t.dim(0) != batch || t.dim(2) != d) {
    throw ShapeError(std::string(what) + " " + shape_str(t.shape()) + " is not [" +
                     std::to_string(batch) + ", *, " + std::to_string(d) + "]");
  }
}

}  // namespace

template <typename T>
LayerResult<T> inject_first_layer(const Tensor<T>& prompts, const Tensor<T>& patches,
                                  const Tensor<T>& cls, const BackboneParams<T>& backbone,
                                  const ModelConfig& config) {
  const std::size_t d = config.dim;
  if (patches.rank() != 3 || patches.dim(2) != d) {
    throw ShapeError("inject_first_layer: patch embeddings " + shape_str(patches.shape()) +
                     " do not have width " + std::to_string(d));
  }
  const std::size_t b = patches.dim(0);
  require_tokens(prompts, "inject_first_layer: prompts", b, d);
  if (cls.shape() != Shape{1, d}) {
    throw ShapeError("inject_first_layer: cls token " + shape_str(cls.shape()) + " is not [1, " +
                     std::to_string(d) + "]");
  }
  SequenceLayout layout{prompts.dim(1), patches.dim(1)};
  const auto input = concat<T>({broadcast_rows(cls, b), prompts, patches}, 1);
  return {encoder_layer_forward(0, input, backbone, config), layout};
}

template <typename T>
LayerResult<T> inject_deep(const Tensor<T>& prompts, const Tensor<T>& stripped,
                           std::size_t layer_idx, const BackboneParams<T>& backbone,
                           const ModelConfig& config) {
  const std::size_t d = config.dim;
  if (stripped.rank() != 3 || stripped.dim(2) != d || stripped.dim(1) != 1 + config.num_patches()) {
    throw ShapeError("inject_deep: stripped sequence " + shape_str(stripped.shape()) +
                     " does not match layout CLS + " + std::to_string(config.num_patches()) +
                     " patches of width " + std::to_string(d));
  }
  const std::size_t b = stripped.dim(0);
  require_tokens(prompts, "inject_deep: prompts", b, d);
  SequenceLayout layout{prompts.dim(1), config.num_patches()};
  const auto cls = slice(stripped, 1, 0, 1);
  const auto patches = slice(stripped, 1, 1, stripped.dim(1));
  const auto input = concat<T>({cls, prompts, patches}, 1);
  return {encoder_layer_forward(layer_idx, input, backbone, config), layout};
}

template <typename T>
Tensor<T> strip_prompt_tokens(const Tensor<T>& sequence, const SequenceLayout& layout) {
  if (sequence.rank() != 3 || sequence.dim(1) != layout.length()) {
    throw ShapeError("strip_prompt_tokens: sequence " + shape_str(sequence.shape()) +
                     " does not match layout length " + std::to_string(layout.length()));
  }
  if (layout.prompt_count == 0) return sequence;
  return concat<T>({slice(sequence, 1, 0, 1), slice(sequence, 1, layout.patch_offset(), layout.length())}, 1);
}

#define V2APT_INSTANTIATE_PROMPTS(T)                                                            \
  template struct PromptSet<T>;                                                                 \
  template PromptSet<T> init_domain_prompts(const ModelConfig&, Rng&);                          \
  template Tensor<T> broadcast_rows(const Tensor<T>&, std::size_t);                             \
  template LayerResult<T> inject_first_layer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                             const BackboneParams<T>&, const ModelConfig&);     \
  template LayerResult<T> inject_deep(const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                                      const BackboneParams<T>&, const ModelConfig&);            \
  template Tensor<T> strip_prompt_tokens(const Tensor<T>&, const SequenceLayout&);

V2APT_INSTANTIATE_PROMPTS(float)
V2APT_INSTANTIATE_PROMPTS(double)

#undef V2APT_INSTANTIATE_PROMPTS

}  // namespace v2apt
