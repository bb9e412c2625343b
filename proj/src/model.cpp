// SPDX-License-Identifier: Apache-2.0
#include "v2apt/model.hpp"

#include <algorithm>

#include "v2apt/rng.hpp"

namespace v2apt {

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng init = Rng(seed).split("init");
  backbone_ = BackboneParams<T>::init(config_, init);
  prompts_ = init_domain_prompts<T>(config_, init);
  if (config_.uses_vae()) vae_ = VaeParams<T>::init(config_, init);
  backbone_.collect(params_);
  prompts_.collect(params_);
  if (vae_) vae_->collect(params_);
  for (auto& p : params_) p.tensor.set_requires_grad(true);
}

template <typename T>
Parameter<T>* Model<T>::find(const std::string& name) {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <typename T>
const Parameter<T>* Model<T>::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

template <typename T>
const FreezeMask& Model<T>::freeze() {
  mask_ = freeze_backbone(params_);
  return mask_;
}

template <typename T>
void Model<T>::apply_freeze_mask(const FreezeMask& mask) {
  for (auto& p : params_) {
    const bool frozen = mask.contains(p.name);
    p.trainable = !frozen;
    p.tensor.set_requires_grad(!frozen);
    if (frozen) p.tensor.clear_grad();
  }
  mask_ = mask;
}

template <typename T>
void Model<T>::copy_backbone_from(const ParameterList<T>& source) {
  for (auto& p : params_) {
    if (p.name.rfind("backbone.", 0) != 0) continue;
    auto it = std::find_if(source.begin(), source.end(), [&](const auto& s) { return s.name == p.name; });
    if (it == source.end()) throw ConfigError("backbone parameter '" + p.name + "' missing from source");
    if (it->tensor.shape() != p.tensor.shape()) {
      throw ConfigError("backbone parameter '" + p.name + "' has shape " +
                        shape_str(it->tensor.shape()) + ", expected " + shape_str(p.tensor.shape()));
    }
    auto src = it->tensor.data();
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
}

template <typename T>
ForwardOutput<T> Model<T>::forward(const Tensor<T>& images, SampleMode mode, Rng* eps_rng,
                                   ForwardTrace<T>* trace) const {
  if (images.rank() != 4) {
    throw ShapeError("forward: expected [B, H, W, C] images, got " + shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0), d = config_.dim;
  ForwardOutput<T> out;
  const auto embeddings = patch_embed(images, backbone_, config_);

  InstancePrompts<T> instance;
  if (vae_) {
    const auto x = pool_input_embeddings(embeddings);
    auto dist = encode(x, *vae_, config_);
    const auto z = reparameterize(dist, eps_rng, mode);
    instance = decode(z, *vae_, config_);
    out.kl = kl_divergence(dist);
    out.latent = std::move(dist);
  } else {
    out.kl = Tensor<T>::scalar(T(0));
  }
  const auto prompts = compose_prompts(instance, prompts_, b, config_);

  if (trace) {
    *trace = ForwardTrace<T>{};
    trace->patch_embeddings = embeddings;
  }
  auto record = [&](const LayerResult<T>& r, const Tensor<T>& layer_prompts) {
    if (!trace) return;
    trace->layer_input_lengths.push_back(r.layout.length());
    trace->layer_prompts.push_back(layer_prompts);
    trace->layer_patch_outputs.push_back(slice(r.output, 1, r.layout.patch_offset(), r.layout.length()));
  };

  auto result = inject_first_layer(prompts[0], embeddings, backbone_.cls_token, backbone_, config_);
  record(result, prompts[0]);
  for (std::size_t i = 1; i < config_.layers; ++i) {
    const auto stripped = strip_prompt_tokens(result.output, result.layout);
    result = inject_deep(prompts[i], stripped, i, backbone_, config_);
    record(result, prompts[i]);
  }
  const auto cls = reshape(slice(result.output, 1, 0, 1), {b, d});
  const auto normed = layer_norm(cls, backbone_.norm_gamma, backbone_.norm_beta);
  out.logits = classify(normed, backbone_);
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace v2apt
