// SPDX-License-Identifier: Apache-2.0
#include "v2apt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "v2apt/binary_io.hpp"

namespace v2apt {

template <typename T>
SimMap cosine_similarity_map(const Tensor<T>& prompt_tokens, const Tensor<T>& patch_features) {
  if (prompt_tokens.rank() != 2 || patch_features.rank() != 2 ||
      prompt_tokens.dim(1) != patch_features.dim(1)) {
    throw ShapeError("cosine_similarity_map: incompatible shapes " + shape_str(prompt_tokens.shape()) +
                     " and " + shape_str(patch_features.shape()));
  }
  const std::size_t k = prompt_tokens.dim(0), p = patch_features.dim(0), d = prompt_tokens.dim(1);
  const auto a = prompt_tokens.data();
  const auto b = patch_features.data();
  auto norms = [d](std::span<const T> x, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(x[i * d + j]) * static_cast<double>(x[i * d + j]);
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const auto na = norms(a, k), nb = norms(b, p);
  SimMap map;
  map.rows = k;
  map.cols = p;
  map.values.assign(k * p, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      if (na[i] == 0.0 || nb[j] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(a[i * d + c]) * static_cast<double>(b[j * d + c]);
      map.values[i * p + j] = std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0);
    }
  }
  return map;
}

double mean_similarity(const SimMap& map) {
  if (map.values.empty()) return 0.0;
  double s = 0.0;
  for (double v : map.values) s += v;
  return s / static_cast<double>(map.values.size());
}

MapFormat parse_map_format(const std::string& name) {
  if (name == "csv") return MapFormat::csv;
  if (name == "pgm") return MapFormat::pgm;
  throw ConfigError("unknown map format '" + name + "' (valid formats: csv, pgm)");
}

std::uint8_t map_to_gray(double value) {
  const double v = std::clamp(value, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::floor((v + 1.0) * 127.5 + 0.5));
}

std::string encode_map(const SimMap& map, MapFormat format) {
  std::string out;
  if (format == MapFormat::csv) {
    out += "prompt";
    for (std::size_t j = 0; j < map.cols; ++j) out += "," + std::to_string(j);
    out += '\n';
    char buf[32];
    for (std::size_t i = 0; i < map.rows; ++i) {
      out += std::to_string(i);
      for (std::size_t j = 0; j < map.cols; ++j) {
        std::snprintf(buf, sizeof buf, ",%.9g", map.at(i, j));
        out += buf;
      }
      out += '\n';
    }
    return out;
  }
  out = "P5\n" + std::to_string(map.cols) + " " + std::to_string(map.rows) + "\n255\n";
  for (double v : map.values) out.push_back(static_cast<char>(map_to_gray(v)));
  return out;
}

void export_map(const SimMap& map, const std::string& path, MapFormat format) {
  const auto text = encode_map(map, format);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

SimMap parse_map_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("header", "similarity csv: missing header");
  SimMap map;
  map.cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::size_t n = 0;
    while (std::getline(row, cell, ',')) {
      map.values.push_back(std::stod(cell));
      ++n;
    }
    if (n != map.cols) throw FormatError("row", "similarity csv: ragged row");
    ++map.rows;
  }
  return map;
}

template <typename T>
std::vector<SimMap> layer_similarity_maps(const Model<T>& model, const Dataset& data, std::size_t index) {
  check_compatible(model.config(), data);
  if (index >= data.size()) {
    throw ContractError("input index " + std::to_string(index) + " out of range for " +
                        std::to_string(data.size()) + " samples");
  }
  NoGradGuard no_grad;
  const std::size_t idx[] = {index};
  ForwardTrace<T> trace;
  model.forward(data.images<T>(idx), SampleMode::eval, nullptr, &trace);
  const auto& cfg = model.config();
  std::vector<SimMap> maps;
  for (std::size_t layer = 0; layer < cfg.layers; ++layer) {
    const auto prompts = reshape(trace.layer_prompts[layer], {cfg.prompt_tokens, cfg.dim});
    const auto patches = reshape(trace.layer_patch_outputs[layer], {cfg.num_patches(), cfg.dim});
    auto map = cosine_similarity_map(prompts, patches);
    map.layer = layer;
    map.input_index = index;
    maps.push_back(std::move(map));
  }
  return maps;
}

template <typename T>
LatentStats latent_stats(const Model<T>& model, const Dataset& data) {
  check_compatible(model.config(), data);
  if (!model.vae()) throw ConfigError("latent_stats: model has no VAE (model.instance_tokens = 0)");
  if (data.size() == 0) throw ContractError("latent_stats: empty dataset");
  NoGradGuard no_grad;
  const std::size_t z = model.config().latent_dim;
  LatentStats stats;
  stats.samples = data.size();
  std::vector<double> mus;
  mus.reserve(data.size() * z);
  double kl_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < data.size(); lo += 256) {
    const std::size_t hi = std::min(lo + 256, data.size());
    idx.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    const auto out = model.forward(data.images<T>(idx), SampleMode::eval);
    const auto mu = out.latent->mu.data();
    const auto lv = out.latent->logvar.data();
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double m = static_cast<double>(mu[i]), l = static_cast<double>(lv[i]);
      mus.push_back(m);
      kl_sum += 0.5 * (m * m + std::exp(l) - 1.0 - l);
    }
  }
  const auto n = static_cast<double>(data.size());
  stats.mean_kl = kl_sum / n;
  stats.mu_mean.assign(z, 0.0);
  stats.mu_variance.assign(z, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < z; ++j) stats.mu_mean[j] += mus[i * z + j];
  }
  for (auto& m : stats.mu_mean) m /= n;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < z; ++j) {
      const double dlt = mus[i * z + j] - stats.mu_mean[j];
      stats.mu_variance[j] += dlt * dlt;
    }
  }
  for (auto& v : stats.mu_variance) {
    v /= n;
    if (v > kActiveDimThreshold) ++stats.active_dims;
  }
  return stats;
}

template <typename T>
SimilarityComparison compare_similarity(const Model<T>& with_vae, const Model<T>& without_vae,
                                        const Dataset& data, std::size_t layer, std::size_t count) {
  if (layer >= with_vae.config().layers || layer >= without_vae.config().layers) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range");
  }
  SimilarityComparison cmp;
  cmp.layer = layer;
  cmp.inputs = std::min(count, data.size());
  for (std::size_t i = 0; i < cmp.inputs; ++i) {
    cmp.with_vae += mean_similarity(layer_similarity_maps(with_vae, data, i)[layer]);
    cmp.without_vae += mean_similarity(layer_similarity_maps(without_vae, data, i)[layer]);
  }
  if (cmp.inputs > 0) {
    cmp.with_vae /= static_cast<double>(cmp.inputs);
    cmp.without_vae /= static_cast<double>(cmp.inputs);
  }
  return cmp;
}

#define V2APT_INSTANTIATE_ANALYSIS(T)                                                              \
  template SimMap cosine_similarity_map(const Tensor<T>&, const Tensor<T>&);                      \
  template std::vector<SimMap> layer_similarity_maps(const Model<T>&, const Dataset&, std::size_t); \
  template LatentStats latent_stats(const Model<T>&, const Dataset&);                            \
  template SimilarityComparison compare_similarity(const Model<T>&, const Model<T>&, const Dataset&, \
                                                   std::size_t, std::size_t);

V2APT_INSTANTIATE_ANALYSIS(float)
V2APT_INSTANTIATE_ANALYSIS(double)

#undef V2APT_INSTANTIATE_ANALYSIS

}  // namespace v2apt
