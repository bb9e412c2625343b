// SPDX-License-Identifier: Apache-2.0
#include "v2apt/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "v2apt/binary_io.hpp"
#include "v2apt/rng.hpp"

namespace v2apt {

void TaskSpec::validate() const {
  if (num_classes < 2) {
    throw ConfigError("task '" + name + "': need at least 2 classes, got " + std::to_string(num_classes));
  }
  if (generator != "patterns") throw ConfigError("task '" + name + "': unknown generator '" + generator + "'");
  if (samples_per_class == 0) throw ConfigError("task '" + name + "': samples_per_class must be positive");
  if (image_size < 4 || channels == 0) throw ConfigError("task '" + name + "': image too small");
  if (!(noise_sigma >= 0.0)) throw ConfigError("task '" + name + "': noise sigma must be >= 0");
  auto rate = [&](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("task '" + name + "': " + what + " must lie in [0, 1]");
  };
  rate(brightness_offset, "brightness offset");
  rate(occlusion_rate, "occlusion rate");
  rate(contrast, "contrast");
  if (!(texture_frequency > 0.0)) throw ConfigError("task '" + name + "': texture frequency must be positive");
}

std::string TaskSpec::descriptor(std::uint64_t seed) const {
  std::ostringstream os;
  os << generator << ":" << name << " seed=" << seed << " C=" << num_classes
     << " n=" << samples_per_class << " sigma=" << noise_sigma << " brightness=" << brightness_offset
     << " freq=" << texture_frequency << " occlusion=" << occlusion_rate;
  return os.str();
}

namespace {

std::map<std::string, TaskSpec, std::less<>> make_presets() {
  std::map<std::string, TaskSpec, std::less<>> p;
  TaskSpec easy;
  easy.name = "easy-3";
  easy.num_classes = 3;
  easy.samples_per_class = 100;
  easy.noise_sigma = 0.05;
  p[easy.name] = easy;

  TaskSpec a;
  a.name = "shift-A";
  a.num_classes = 5;
  a.samples_per_class = 200;
  a.noise_sigma = 0.08;
  a.texture_frequency = 2.0;
  p[a.name] = a;

  TaskSpec b = a;
  b.name = "shift-B";
  b.brightness_offset = 0.3;
  b.texture_frequency = 3.5;
  p[b.name] = b;

  TaskSpec hard = b;
  hard.name = "shift-B-hard";
  hard.noise_sigma = 0.15;
  hard.texture_frequency = 4.0;
  hard.occlusion_rate = 0.1;
  p[hard.name] = hard;
  return p;
}

const std::map<std::string, TaskSpec, std::less<>>& presets() {
  static const auto table = make_presets();
  return table;
}

enum class Family { stripes, blob, checker, ring, two_blobs };

struct ClassPattern {
  Family family;
  double angle;  // radians, stripes/checker orientation
};

const ClassPattern kPatterns[] = {
    {Family::stripes, 0.0},
    {Family::blob, 0.0},
    {Family::checker, 0.0},
    {Family::stripes, std::numbers::pi / 2},
    {Family::ring, 0.0},
    {Family::stripes, std::numbers::pi / 4},
    {Family::two_blobs, 0.0},
    {Family::checker, std::numbers::pi / 4},
};

// Pattern intensity in [0, 1] at pixel (x, y) translated by (dx, dy).
double pattern_value(const ClassPattern& cp, double x, double y, double dx, double dy, double side,
                     double freq) {
  const double u = x - dx, v = y - dy;
  const double w = 2.0 * std::numbers::pi * freq / side;
  switch (cp.family) {
    case Family::stripes: {
      const double t = u * std::cos(cp.angle) + v * std::sin(cp.angle);
      return 0.5 + 0.5 * std::cos(w * t);
    }
    case Family::checker: {
      const double a = u * std::cos(cp.angle) + v * std::sin(cp.angle);
      const double b = -u * std::sin(cp.angle) + v * std::cos(cp.angle);
      return std::sin(w * a + 0.5) * std::sin(w * b + 0.5) >= 0.0 ? 1.0 : 0.0;
    }
    case Family::blob:
    case Family::ring:
    case Family::two_blobs: {
      // Blob size shrinks as texture frequency grows.
      const double r = side / (2.0 * freq);
      const double cx = side / 2.0 - 0.5, cy = side / 2.0 - 0.5;
      auto gauss = [&](double px, double py) {
        const double d2 = (u - px) * (u - px) + (v - py) * (v - py);
        return std::exp(-d2 / (2.0 * r * r / 2.25));
      };
      if (cp.family == Family::blob) return gauss(cx, cy);
      if (cp.family == Family::two_blobs) {
        return std::max(gauss(cx - r, cy - r), gauss(cx + r, cy + r));
      }
      const double dist = std::hypot(u - cx, v - cy);
      const double ring = (dist - r) / (0.35 * r);
      return std::exp(-0.5 * ring * ring);
    }
  }
  return 0.0;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : presets()) names.push_back(name);
  return names;
}

TaskSpec preset(std::string_view name) {
  const auto it = presets().find(name);
  if (it == presets().end()) {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "' (valid presets: " + valid + ")");
  }
  return it->second;
}

std::span<const float> Dataset::image(std::size_t i) const {
  return std::span<const float>(pixels).subspan(i * image_numel(), image_numel());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.num_classes = num_classes;
  out.descriptor = descriptor;
  out.pixels.reserve(indices.size() * image_numel());
  for (auto i : indices) {
    if (i >= size()) throw ContractError("dataset index " + std::to_string(i) + " out of range");
    const auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::size_t Dataset::count_of(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

template <typename T>
Tensor<T> Dataset::images(std::span<const std::size_t> indices) const {
  std::vector<T> data;
  data.reserve(indices.size() * image_numel());
  for (auto i : indices) {
    for (float v : image(i)) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({indices.size(), height, width, channels}, std::move(data));
}

template <typename T>
Tensor<T> Dataset::all_images() const {
  std::vector<T> data(pixels.begin(), pixels.end());
  return Tensor<T>({size(), height, width, channels}, std::move(data));
}

template Tensor<float> Dataset::images<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::images<double>(std::span<const std::size_t>) const;
template Tensor<float> Dataset::all_images<float>() const;
template Tensor<double> Dataset::all_images<double>() const;

void Dataset::validate() const {
  if (pixels.size() != size() * image_numel()) {
    throw ContractError("dataset: " + std::to_string(pixels.size()) + " pixels for " +
                        std::to_string(size()) + " images of " + std::to_string(image_numel()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ContractError("dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                          " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (float v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("dataset: pixel value outside [0, 1]");
  }
}

Dataset generate(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.num_classes > std::size(kPatterns)) {
    throw ConfigError("task '" + spec.name + "': at most " + std::to_string(std::size(kPatterns)) +
                      " classes are available");
  }
  const std::size_t s = spec.image_size, c_in = spec.channels;
  const std::size_t cell = 4;
  const std::size_t cells = (s + cell - 1) / cell;
  Dataset ds;
  ds.height = ds.width = s;
  ds.channels = c_in;
  ds.num_classes = spec.num_classes;
  ds.descriptor = spec.descriptor(seed);
  const std::size_t total = spec.num_classes * spec.samples_per_class;
  ds.pixels.resize(total * s * s * c_in);
  ds.labels.resize(total);

  const Rng root = Rng(seed).split("generate");
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng shuffle = root.split("order");
  for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  std::vector<double> gains(c_in);
  for (std::size_t ch = 0; ch < c_in; ++ch) gains[ch] = 1.0 - 0.15 * static_cast<double>(ch);

  for (std::size_t n = 0; n < total; ++n) {
    const int label = static_cast<int>(n / spec.samples_per_class);
    const std::size_t slot = order[n];
    ds.labels[slot] = label;
    Rng r = root.split(static_cast<std::uint64_t>(n));
    // Placement on a 4x4 grid of translations.
    const double dx = static_cast<double>(r.below(4));
    const double dy = static_cast<double>(r.below(4));
    std::vector<bool> occluded(cells * cells, false);
    for (std::size_t i = 0; i < occluded.size(); ++i) {
      occluded[i] = spec.occlusion_rate > 0.0 && r.uniform() < spec.occlusion_rate;
    }
    float* out = ds.pixels.data() + slot * s * s * c_in;
    const ClassPattern& cp = kPatterns[label];
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const double p = pattern_value(cp, static_cast<double>(x), static_cast<double>(y), dx, dy,
                                       static_cast<double>(s), spec.texture_frequency);
        const bool hidden = occluded[(y / cell) * cells + x / cell];
        for (std::size_t ch = 0; ch < c_in; ++ch) {
          double v = hidden ? 0.5 : 0.5 + spec.contrast * (p - 0.5) * gains[ch];
          v += spec.brightness_offset;
          if (spec.noise_sigma > 0.0) v += spec.noise_sigma * r.normal();
          out[(y * s + x) * c_in + ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return ds;
}

namespace {
constexpr char kDatasetMagic[4] = {'V', '2', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  ByteWriter w;
  w.raw(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.height));
  w.u32(static_cast<std::uint32_t>(ds.width));
  w.u32(static_cast<std::uint32_t>(ds.channels));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(32);  // bits per pixel value
  for (float v : ds.pixels) w.f32(v);
  for (int label : ds.labels) w.u32(static_cast<std::uint32_t>(label));
  append_crc32(w);
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader header(bytes);
  const auto magic = header.raw(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic)) {
    throw FormatError("magic", "dataset: bad magic (expected V2DS)");
  }
  const auto version = header.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("version", "dataset: unsupported version " + std::to_string(version));
  }
  const auto payload = check_crc32(bytes, "dataset");
  ByteReader r(payload);
  r.raw(8, "magic");
  Dataset ds;
  const std::size_t b = r.u32("count");
  ds.height = r.u32("height");
  ds.width = r.u32("width");
  ds.channels = r.u32("channels");
  ds.num_classes = r.u32("num_classes");
  if (r.u32("pixel_bits") != 32) throw FormatError("pixel_bits", "dataset: only 32-bit pixels are supported");
  const std::size_t n = b * ds.height * ds.width * ds.channels;
  if (r.remaining() != n * 4 + b * 4) {
    throw FormatError("count", "dataset: payload size does not match header extents");
  }
  ds.pixels.resize(n);
  for (auto& v : ds.pixels) v = r.f32("pixels");
  ds.labels.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto label = r.u32("labels");
    if (label >= ds.num_classes) {
      throw FormatError("labels", "dataset: label " + std::to_string(label) + " at index " +
                                      std::to_string(i) + " is not below class count " +
                                      std::to_string(ds.num_classes));
    }
    ds.labels[i] = static_cast<int>(label);
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::string& path) {
  Dataset ds = decode_dataset(read_file(path));
  ds.descriptor = "file:" + path;
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw ContractError("split: train fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  const Rng root = Rng(seed).split("split");
  std::vector<std::size_t> train, test;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw ContractError("split: class " + std::to_string(c) + " has fewer than 2 samples");
    }
    Rng r = root.split(static_cast<std::uint64_t>(c));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[r.below(i)]);
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * train_frac));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

}  // namespace v2apt
