// SPDX-License-Identifier: Apache-2.0
#include "v2apt/vit.hpp"

#include <algorithm>
#include <cmath>

#include "v2apt/rng.hpp"

namespace v2apt {

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v));
}

namespace {

template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor<T>({fan_in, fan_out}, xavier_bound(fan_in, fan_out), rng);
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace

template <typename T>
BackboneParams<T> BackboneParams<T>::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t patch_in = config.patch_size * config.patch_size * config.channels;
  const std::size_t hidden = d * config.mlp_ratio;
  BackboneParams p;
  Rng body = rng.split("backbone");
  p.patch_weight = xavier<T>(patch_in, d, body);
  p.patch_bias = Tensor<T>::zeros({d});
  p.pos_embed = normal_tensor<T>({config.num_patches(), d}, 0.02, body);
  p.cls_token = normal_tensor<T>({1, d}, 0.02, body);
  for (std::size_t i = 0; i < config.layers; ++i) {
    EncoderLayerParams<T> l;
    l.ln1_gamma = Tensor<T>::filled({d}, T(1));
    l.ln1_beta = Tensor<T>::zeros({d});
    l.qkv_weight = xavier<T>(d, 3 * d, body);
    l.qkv_bias = Tensor<T>::zeros({3 * d});
    l.proj_weight = xavier<T>(d, d, body);
    l.proj_bias = Tensor<T>::zeros({d});
    l.ln2_gamma = Tensor<T>::filled({d}, T(1));
    l.ln2_beta = Tensor<T>::zeros({d});
    l.fc1_weight = xavier<T>(d, hidden, body);
    l.fc1_bias = Tensor<T>::zeros({hidden});
    l.fc2_weight = xavier<T>(hidden, d, body);
    l.fc2_bias = Tensor<T>::zeros({d});
    p.layers.push_back(std::move(l));
  }
  p.norm_gamma = Tensor<T>::filled({d}, T(1));
  p.norm_beta = Tensor<T>::zeros({d});
  Rng head = rng.split("head");
  p.head_weight = xavier<T>(d, config.num_classes, head);
  p.head_bias = Tensor<T>::zeros({config.num_classes});
  return p;
}

template <typename T>
void BackboneParams<T>::collect(ParameterList<T>& out) const {
  auto add = [&out](std::string name, const Tensor<T>& t) { out.push_back({std::move(name), t, true}); };
  add("backbone.patch.weight", patch_weight);
  add("backbone.patch.bias", patch_bias);
  add("backbone.pos_embed", pos_embed);
  add("backbone.cls_token", cls_token);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string pre = "backbone.layers." + std::to_string(i) + ".";
    add(pre + "ln1.gamma", l.ln1_gamma);
    add(pre + "ln1.beta", l.ln1_beta);
    add(pre + "attn.qkv.weight", l.qkv_weight);
    add(pre + "attn.qkv.bias", l.qkv_bias);
    add(pre + "attn.proj.weight", l.proj_weight);
    add(pre + "attn.proj.bias", l.proj_bias);
    add(pre + "ln2.gamma", l.ln2_gamma);
    add(pre + "ln2.beta", l.ln2_beta);
    add(pre + "mlp.fc1.weight", l.fc1_weight);
    add(pre + "mlp.fc1.bias", l.fc1_bias);
    add(pre + "mlp.fc2.weight", l.fc2_weight);
    add(pre + "mlp.fc2.bias", l.fc2_bias);
  }
  add("backbone.norm.gamma", norm_gamma);
  add("backbone.norm.beta", norm_beta);
  add("head.weight", head_weight);
  add("head.bias", head_bias);
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const BackboneParams<T>& params,
                      const ModelConfig& config) {
  const bool single = images.rank() == 3;
  if (!single && images.rank() != 4) {
    throw ShapeError("patch_embed: expected [B, H, W, C] images, got " + shape_str(images.shape()));
  }
  const Tensor<T> batch = single ? reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)}) : images;
  const std::size_t b = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  const std::size_t p = config.patch_size;
  if (h != w) throw ConfigError("patch_embed: image must be square, got " + shape_str(images.shape()));
  if (p == 0 || h % p != 0) {
    throw ConfigError("patch_embed: image side " + std::to_string(h) +
                      " is not divisible by patch side " + std::to_string(p));
  }
  if (h != config.image_size || c != config.channels) {
    throw ShapeError("patch_embed: image " + shape_str(images.shape()) + " does not match config " +
                     std::to_string(config.image_size) + "x" + std::to_string(config.image_size) +
                     "x" + std::to_string(config.channels));
  }
  const std::size_t g = h / p;
  const std::size_t np = g * g;
  // [B, gy, p, gx, p, C] -> [B, gy, gx, p, p, C] -> one row per patch.
  auto patches = reshape(batch, {b, g, p, g, p, c});
  patches = permute(patches, {0, 1, 3, 2, 4, 5});
  patches = reshape(patches, {b * np, p * p * c});
  auto e = add_bias(matmul(patches, params.patch_weight), params.patch_bias);
  std::vector<std::size_t> pos_idx(b * np);
  for (std::size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = i % np;
  e = add(e, embedding<T>(params.pos_embed, pos_idx));
  return single ? reshape(e, {np, config.dim}) : reshape(e, {b, np, config.dim});
}

template <typename T>
Tensor<T> encoder_layer_forward(std::size_t layer_idx, const Tensor<T>& tokens,
                                const BackboneParams<T>& params, const ModelConfig& config) {
  if (layer_idx >= params.layers.size()) {
    throw ContractError("encoder_layer_forward: layer " + std::to_string(layer_idx) +
                        " out of range for " + std::to_string(params.layers.size()) + " layers");
  }
  const std::size_t d = config.dim;
  const bool single = tokens.rank() == 2;
  if ((!single && tokens.rank() != 3) || tokens.shape().back() != d) {
    throw ShapeError("encoder_layer_forward: tokens " + shape_str(tokens.shape()) +
                     " do not have width d=" + std::to_string(d));
  }
  const std::size_t b = single ? 1 : tokens.dim(0);
  const std::size_t s = single ? tokens.dim(0) : tokens.dim(1);
  const std::size_t heads = config.heads, hd = config.head_dim();
  const auto& l = params.layers[layer_idx];

  const auto x = reshape(tokens, {b * s, d});
  auto h = layer_norm(x, l.ln1_gamma, l.ln1_beta);
  auto qkv = add_bias(matmul(h, l.qkv_weight), l.qkv_bias);
  // [B, S, 3, H, hd] -> [3, B, H, S, hd]
  qkv = permute(reshape(qkv, {b, s, 3, heads, hd}), {2, 0, 3, 1, 4});
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, i + 1), {b * heads, s, hd}); };
  const auto q = part(0), k = part(1), v = part(2);
  auto scores = scale(batched_matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto ctx = batched_matmul(softmax(scores, 2), v);
  ctx = reshape(permute(reshape(ctx, {b, heads, s, hd}), {0, 2, 1, 3}), {b * s, d});
  const auto x1 = add(x, add_bias(matmul(ctx, l.proj_weight), l.proj_bias));

  auto m = layer_norm(x1, l.ln2_gamma, l.ln2_beta);
  m = gelu(add_bias(matmul(m, l.fc1_weight), l.fc1_bias));
  m = add_bias(matmul(m, l.fc2_weight), l.fc2_bias);
  const auto out = add(x1, m);
  return single ? reshape(out, {s, d}) : reshape(out, {b, s, d});
}

template <typename T>
Tensor<T> classify(const Tensor<T>& cls_out, const BackboneParams<T>& params) {
  const bool single = cls_out.rank() == 1;
  const std::size_t d = params.head_weight.dim(0);
  if ((!single && cls_out.rank() != 2) || cls_out.shape().back() != d) {
    throw ShapeError("classify: input " + shape_str(cls_out.shape()) + " does not have width " +
                     std::to_string(d));
  }
  const auto x = single ? reshape(cls_out, {1, d}) : cls_out;
  auto logits = add_bias(matmul(x, params.head_weight), params.head_bias);
  return single ? reshape(logits, {params.head_bias.dim(0)}) : logits;
}

bool FreezeMask::contains(const std::string& name) const {
  return std::find(frozen.begin(), frozen.end(), name) != frozen.end();
}

template <typename T>
FreezeMask freeze_backbone(ParameterList<T>& params) {
  FreezeMask mask;
  for (auto& p : params) {
    if (p.name.rfind("backbone.", 0) == 0) {
      p.trainable = false;
      p.tensor.set_requires_grad(false);
      p.tensor.clear_grad();
      mask.frozen.push_back(p.name);
    }
  }
  return mask;
}

#define V2APT_INSTANTIATE_VIT(T)                                                                 \
  template struct BackboneParams<T>;                                                             \
  template Tensor<T> uniform_tensor<T>(Shape, double, Rng&);                                     \
  template Tensor<T> patch_embed(const Tensor<T>&, const BackboneParams<T>&, const ModelConfig&); \
  template Tensor<T> encoder_layer_forward(std::size_t, const Tensor<T>&, const BackboneParams<T>&, \
                                           const ModelConfig&);                                  \
  template Tensor<T> classify(const Tensor<T>&, const BackboneParams<T>&);                       \
  template FreezeMask freeze_backbone(ParameterList<T>&);

V2APT_INSTANTIATE_VIT(float)
V2APT_INSTANTIATE_VIT(double)

#undef V2APT_INSTANTIATE_VIT

}  // namespace v2apt
