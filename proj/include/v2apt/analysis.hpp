// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "v2apt/checkpoint.hpp"

namespace v2apt {

/// Cosine similarities between k prompt tokens (rows) and P patch features
/// (columns).
struct SimMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major rows × cols
  std::size_t layer = 0;
  std::string checkpoint_id;
  std::size_t input_index = 0;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

/// Entry (i, j) = <p_i, f_j> / (|p_i| |f_j|), or 0 when either row has zero
/// norm. Inputs are [k, d] and [P, d].
template <typename T>
SimMap cosine_similarity_map(const Tensor<T>& prompt_tokens, const Tensor<T>& patch_features);

double mean_similarity(const SimMap& map);

enum class MapFormat { csv, pgm };
MapFormat parse_map_format(const std::string& name);

/// CSV: header of patch indices, then one row per prompt token with 9
/// significant digits. PGM: binary P5, entries mapped [-1, 1] -> [0, 255]
/// with round-half-up.
std::string encode_map(const SimMap& map, MapFormat format);
void export_map(const SimMap& map, const std::string& path, MapFormat format);
SimMap parse_map_csv(const std::string& text);
std::uint8_t map_to_gray(double value);

/// Maps for every layer of one input: composed prompts entering layer i vs
/// patch tokens leaving it.
template <typename T>
std::vector<SimMap> layer_similarity_maps(const Model<T>& model, const Dataset& data, std::size_t index);

struct LatentStats {
  std::vector<double> mu_mean;
  std::vector<double> mu_variance;
  double mean_kl = 0.0;
  std::size_t active_dims = 0;
  std::size_t samples = 0;
};

inline constexpr double kActiveDimThreshold = 0.01;

/// Eval-mode statistics of the encoder mean over a dataset. Throws
/// ConfigError when the model has no VAE or does not fit the dataset.
template <typename T>
LatentStats latent_stats(const Model<T>& model, const Dataset& data);

struct SimilarityComparison {
  double with_vae = 0.0;
  double without_vae = 0.0;
  std::size_t inputs = 0;
  std::size_t layer = 0;
};

/// Mean similarity at `layer`, averaged over the first `count` inputs, for
/// a model with instance prompts and one without.
template <typename T>
SimilarityComparison compare_similarity(const Model<T>& with_vae, const Model<T>& without_vae,
                                        const Dataset& data, std::size_t layer, std::size_t count);

}  // namespace v2apt
