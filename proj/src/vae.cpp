// SPDX-License-Identifier: Apache-2.0
#include "v2apt/vae.hpp"

#include "v2apt/rng.hpp"

namespace v2apt {

template <typename T>
VaeParams<T> VaeParams<T>::init(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.dim, h = config.vae_hidden, z = config.latent_dim;
  const std::size_t out = config.layers * config.instance_tokens * d;
  Rng s = rng.split("vae");
  VaeParams p;
  p.enc_fc1_weight = uniform_tensor<T>({d, h}, xavier_bound(d, h), s);
  p.enc_fc1_bias = Tensor<T>::zeros({h});
  p.enc_fc2_weight = uniform_tensor<T>({h, 2 * z}, xavier_bound(h, 2 * z), s);
  p.enc_fc2_bias = Tensor<T>::zeros({2 * z});
  p.dec_fc1_weight = uniform_tensor<T>({z, h}, xavier_bound(z, h), s);
  p.dec_fc1_bias = Tensor<T>::zeros({h});
  p.dec_fc2_weight = uniform_tensor<T>({h, out}, xavier_bound(h, out), s);
  p.dec_fc2_bias = Tensor<T>::zeros({out});
  return p;
}

template <typename T>
void VaeParams<T>::collect(ParameterList<T>& out) const {
  out.push_back({"vae.encoder.fc1.weight", enc_fc1_weight, true});
  out.push_back({"vae.encoder.fc1.bias", enc_fc1_bias, true});
  out.push_back({"vae.encoder.fc2.weight", enc_fc2_weight, true});
  out.push_back({"vae.encoder.fc2.bias", enc_fc2_bias, true});
  out.push_back({"vae.decoder.fc1.weight", dec_fc1_weight, true});
  out.push_back({"vae.decoder.fc1.bias", dec_fc1_bias, true});
  out.push_back({"vae.decoder.fc2.weight", dec_fc2_weight, true});
  out.push_back({"vae.decoder.fc2.bias", dec_fc2_bias, true});
}

template <typename T>
Tensor<T> pool_input_embeddings(const Tensor<T>& embeddings) {
  if (embeddings.rank() == 2) {
    if (embeddings.dim(0) == 0) throw ShapeError("pool_input_embeddings: no patch rows");
    return mean(embeddings, 0);
  }
  if (embeddings.rank() != 3 || embeddings.dim(1) == 0) {
    throw ShapeError("pool_input_embeddings: expected non-empty [B, P, d], got " +
                     shape_str(embeddings.shape()));
  }
  return mean(embeddings, 1);
}

template <typename T>
LatentDistribution<T> encode(const Tensor<T>& x, const VaeParams<T>& params,
                             const ModelConfig& config) {
  const bool single = x.rank() == 1;
  if ((!single && x.rank() != 2) || x.shape().back() != config.dim) {
    throw ShapeError("encode: input " + shape_str(x.shape()) + " does not have width d=" +
                     std::to_string(config.dim));
  }
  const auto batch = single ? reshape(x, {1, config.dim}) : x;
  const std::size_t z = config.latent_dim;
  auto h = gelu(add_bias(matmul(batch, params.enc_fc1_weight), params.enc_fc1_bias));
  const auto out = add_bias(matmul(h, params.enc_fc2_weight), params.enc_fc2_bias);
  auto mu = slice(out, 1, 0, z);
  auto logvar = clamp(slice(out, 1, z, 2 * z), static_cast<T>(-kLogvarClamp), static_cast<T>(kLogvarClamp));
  if (single) return {reshape(mu, {z}), reshape(logvar, {z})};
  return {mu, logvar};
}

template <typename T>
Tensor<T> reparameterize(const LatentDistribution<T>& dist, Rng* rng, SampleMode mode) {
  if (mode == SampleMode::eval) return dist.mu;
  if (!rng) throw ContractError("reparameterize: train mode requires an epsilon stream");
  const auto eps = random_normal<T>(dist.mu.shape(), *rng);
  const auto sigma = exp(scale(dist.logvar, T(0.5)));
  return add(dist.mu, mul(sigma, eps));
}

template <typename T>
InstancePrompts<T> decode(const Tensor<T>& z, const VaeParams<T>& params, const ModelConfig& config) {
  const bool single = z.rank() == 1;
  if ((!single && z.rank() != 2) || z.shape().back() != config.latent_dim) {
    throw ShapeError("decode: latent " + shape_str(z.shape()) + " does not have width z=" +
                     std::to_string(config.latent_dim));
  }
  const auto batch = single ? reshape(z, {1, config.latent_dim}) : z;
  const std::size_t b = batch.dim(0), n = config.layers, k = config.instance_tokens, d = config.dim;
  auto h = gelu(add_bias(matmul(batch, params.dec_fc1_weight), params.dec_fc1_bias));
  const auto flat = add_bias(matmul(h, params.dec_fc2_weight), params.dec_fc2_bias);
  const auto grid = reshape(flat, {b, n, k * d});
  InstancePrompts<T> prompts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto layer = slice(grid, 1, i, i + 1);
    prompts.push_back(single ? reshape(layer, {k, d}) : reshape(layer, {b, k, d}));
  }
  return prompts;
}

template <typename T>
Tensor<T> kl_divergence(const LatentDistribution<T>& dist) {
  if (dist.mu.shape() != dist.logvar.shape()) {
    throw ShapeError("kl_divergence: mu " + shape_str(dist.mu.shape()) + " vs logvar " +
                     shape_str(dist.logvar.shape()));
  }
  const std::size_t batch = dist.mu.rank() == 2 ? dist.mu.dim(0) : 1;
  const auto terms = sub(add_scalar(add(mul(dist.mu, dist.mu), exp(dist.logvar)), T(-1)), dist.logvar);
  return scale(sum(terms), static_cast<T>(0.5 / static_cast<double>(batch)));
}

template <typename T>
ComposedPrompts<T> compose_prompts(const InstancePrompts<T>& instance, const PromptSet<T>& domain,
                                   std::size_t batch, const ModelConfig& config) {
  const std::size_t n = config.layers, d = config.dim;
  if (domain.layers.size() != n || (!instance.empty() && instance.size() != n)) {
    throw ShapeError("compose_prompts: expected " + std::to_string(n) + " layers of prompts");
  }
  ComposedPrompts<T> composed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& dom = domain.layers[i];
    const std::size_t k_inst = instance.empty() ? 0 : instance[i].dim(1);
    const std::size_t k_dom = dom.dim(0);
    if (k_inst + k_dom != config.prompt_tokens) {
      throw ConfigError("prompt budget violated at layer " + std::to_string(i) + ": k_inst " +
                        std::to_string(k_inst) + " + k_dom " + std::to_string(k_dom) +
                        " != k " + std::to_string(config.prompt_tokens));
    }
    if (dom.dim(1) != d) throw ShapeError("compose_prompts: domain prompt width mismatch");
    auto tiled = broadcast_rows(dom, batch);
    if (k_inst == 0) {
      composed.push_back(tiled);
      continue;
    }
    const auto& inst = instance[i];
    if (inst.rank() != 3 || inst.dim(0) != batch || inst.dim(2) != d) {
      throw ShapeError("compose_prompts: instance prompts " + shape_str(inst.shape()) +
                       " are not [" + std::to_string(batch) + ", k_inst, " + std::to_string(d) + "]");
    }
    composed.push_back(k_dom == 0 ? inst : concat<T>({inst, tiled}, 1));
  }
  return composed;
}

#define V2APT_INSTANTIATE_VAE(T)                                                                  \
  template struct VaeParams<T>;                                                                   \
  template Tensor<T> pool_input_embeddings(const Tensor<T>&);                                     \
  template LatentDistribution<T> encode(const Tensor<T>&, const VaeParams<T>&, const ModelConfig&); \
  template Tensor<T> reparameterize(const LatentDistribution<T>&, Rng*, SampleMode);              \
  template InstancePrompts<T> decode(const Tensor<T>&, const VaeParams<T>&, const ModelConfig&);  \
  template Tensor<T> kl_divergence(const LatentDistribution<T>&);                                 \
  template ComposedPrompts<T> compose_prompts(const InstancePrompts<T>&, const PromptSet<T>&,     \
                                              std::size_t, const ModelConfig&);

V2APT_INSTANTIATE_VAE(float)
V2APT_INSTANTIATE_VAE(double)

#undef V2APT_INSTANTIATE_VAE

}  // namespace v2apt
