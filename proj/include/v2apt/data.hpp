// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "v2apt/tensor.hpp"

namespace v2apt {

/// Parameters of a procedural classification task. Class c draws its
/// pattern family (stripes, blobs, checkerboards, rings) from a fixed table;
/// the shift fields move the whole domain.
struct TaskSpec {
  std::string name = "custom";
  std::string generator = "patterns";
  std::size_t num_classes = 3;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  double noise_sigma = 0.0;
  double brightness_offset = 0.0;  // added to every pixel, in [0, 1]
  double texture_frequency = 2.0;  // pattern cycles per image side
  double occlusion_rate = 0.0;     // per-cell probability of a gray occluder
  double contrast = 0.8;

  void validate() const;
  std::string descriptor(std::uint64_t seed) const;
};

std::vector<std::string> preset_names();
/// Throws ConfigError listing the valid names.
TaskSpec preset(std::string_view name);

/// Images are [B, H, W, C] row-major with values in [0, 1].
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t num_classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;
  std::string descriptor;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_numel() const noexcept { return height * width * channels; }
  std::span<const float> image(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  std::size_t count_of(int label) const;

  template <typename T>
  Tensor<T> images(std::span<const std::size_t> indices) const;
  template <typename T>
  Tensor<T> all_images() const;

  /// Throws ContractError on inconsistent lengths, labels >= C or pixels
  /// outside [0, 1].
  void validate() const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.height == b.height && a.width == b.width && a.channels == b.channels &&
           a.num_classes == b.num_classes && a.pixels == b.pixels && a.labels == b.labels;
  }
};

/// Deterministic per (spec, seed). Throws ConfigError when C < 2.
Dataset generate(const TaskSpec& spec, std::uint64_t seed);

/// "V2DS" file: 32-byte header (magic, version, B, H, W, C_in, C, pixel
/// bits), f32 pixels, u32 labels, CRC32 footer.
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

inline constexpr std::size_t kDatasetHeaderBytes = 32;

/// Seeded stratified split; each class keeps round(n_c · train_frac)
/// samples (at least one on each side). Indices keep their original order.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed);

}  // namespace v2apt
