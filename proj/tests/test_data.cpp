// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "v2apt/binary_io.hpp"
#include "v2apt/data.hpp"

using namespace v2apt;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("v2apt_test_" + name)).string();
}

Dataset random_dataset(Rng& rng) {
  Dataset ds;
  ds.height = 1 + rng.below(5);
  ds.width = 1 + rng.below(5);
  ds.channels = 1 + rng.below(3);
  ds.num_classes = 2 + rng.below(4);
  const std::size_t n = rng.below(20);
  for (std::size_t i = 0; i < n * ds.image_numel(); ++i) ds.pixels.push_back(static_cast<float>(rng.uniform()));
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(rng.below(ds.num_classes)));
  return ds;
}

}  // namespace

TEST_CASE("generation is deterministic and valid") {
  for (const auto& name : preset_names()) {
    const auto spec = preset(name);
    const auto a = generate(spec, 7);
    const auto b = generate(spec, 7);
    CHECK(a == b);
    CHECK(a.size() == spec.num_classes * spec.samples_per_class);
    CHECK_NOTHROW(a.validate());
    for (std::size_t c = 0; c < spec.num_classes; ++c) CHECK(a.count_of(static_cast<int>(c)) == spec.samples_per_class);
    CHECK_FALSE(a == generate(spec, 8));
  }
}

TEST_CASE("presets and task validation") {
  try {
    preset("nope");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& name : preset_names()) CHECK(msg.find(name) != std::string::npos);
  }
  auto spec = preset("easy-3");
  CHECK(spec.num_classes == 3);
  spec.num_classes = 1;
  CHECK_THROWS_AS(generate(spec, 0), ConfigError);
  spec = preset("easy-3");
  spec.occlusion_rate = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = preset("easy-3");
  spec.noise_sigma = -0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  const auto a = preset("shift-A"), b = preset("shift-B");
  CHECK(a.num_classes == b.num_classes);
  CHECK(a.brightness_offset != b.brightness_offset);
  CHECK(a.texture_frequency != b.texture_frequency);
}

TEST_CASE("noise-free images are identical within a class up to placement") {
  auto spec = preset("easy-3");
  spec.noise_sigma = 0.0;
  const auto ds = generate(spec, 3);
  std::map<int, std::set<std::vector<float>>> distinct;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    distinct[ds.labels[i]].insert(std::vector<float>(img.begin(), img.end()));
  }
  for (const auto& [label, images] : distinct) {
    INFO("class " << label);
    CHECK(images.size() <= 16);  // 4x4 placement grid
  }
}

TEST_CASE("noise-free easy-3 is linearly separable on raw pixels") {
  auto spec = preset("easy-3");
  spec.noise_sigma = 0.0;
  const auto ds = generate(spec, 5);
  // Deduplicate so the normal equations are well conditioned.
  std::map<std::vector<float>, int> unique;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    unique.emplace(std::vector<float>(img.begin(), img.end()), ds.labels[i]);
  }
  Dataset u;
  u.height = ds.height;
  u.width = ds.width;
  u.channels = ds.channels;
  u.num_classes = ds.num_classes;
  for (const auto& [img, label] : unique) {
    u.pixels.insert(u.pixels.end(), img.begin(), img.end());
    u.labels.push_back(label);
  }
  CHECK(oracle::least_squares_train_accuracy(u, 1e-6) == 1.0);
}

TEST_CASE("dataset file round trip and size") {
  const auto ds = generate(preset("easy-3"), 1);
  const auto path = temp_path("ds.v2ds");
  save_dataset(ds, path);
  const auto bytes = read_file(path);
  const std::size_t b = ds.size(), pixels = ds.height * ds.width * ds.channels;
  CHECK(bytes.size() == 32 + b * pixels * 4 + b * 4 + 4);
  const auto back = load_dataset(path);
  CHECK(back == ds);
  const auto path2 = temp_path("ds2.v2ds");
  save_dataset(back, path2);
  CHECK(read_file(path2) == bytes);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("random datasets round trip byte-exactly") {
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    const auto ds = random_dataset(rng);
    const auto bytes = encode_dataset(ds);
    CHECK(bytes.size() == kDatasetHeaderBytes + ds.pixels.size() * 4 + ds.labels.size() * 4 + 4);
    const auto back = decode_dataset(bytes);
    CHECK(back == ds);
    CHECK(encode_dataset(back) == bytes);
  }
}

TEST_CASE("dataset decoding rejects malformed files") {
  const auto ds = generate(preset("easy-3"), 2);
  auto bytes = encode_dataset(ds);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    try {
      decode_dataset(bytes);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.field() == "magic");
    }
  }
  SUBCASE("truncation") {
    bytes.resize(bytes.size() - 10);
    CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
    bytes.resize(6);
    CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
  }
  SUBCASE("flipped payload byte") {
    bytes[100] ^= 0x01;
    try {
      decode_dataset(bytes);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.field() == "crc32");
    }
  }
  SUBCASE("label not below class count") {
    // Rewrite the last label and refresh the CRC so only validation can fail.
    std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 4);
    const std::size_t last_label = body.size() - 4;
    body[last_label] = 3;
    body[last_label + 1] = body[last_label + 2] = body[last_label + 3] = 0;
    ByteWriter w;
    w.raw(body);
    append_crc32(w);
    try {
      decode_dataset(w.bytes());
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.field() == "labels");
    }
  }
  CHECK_THROWS_AS(load_dataset(temp_path("does/not/exist.v2ds")), IoError);
}

TEST_CASE("stratified split") {
  auto spec = preset("shift-A");
  const auto ds = generate(spec, 4);
  REQUIRE(ds.size() == 1000);
  const auto [train, test] = split(ds, 0.8, 9);
  CHECK(train.size() == 800);
  CHECK(test.size() == 200);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto n = static_cast<double>(ds.count_of(static_cast<int>(c)));
    CHECK(std::abs(static_cast<double>(train.count_of(static_cast<int>(c))) - 0.8 * n) <= 1.0);
  }
  // Union of the splits is the original multiset of (image, label).
  std::multiset<std::pair<std::vector<float>, int>> all, joined;
  for (std::size_t i = 0; i < ds.size(); ++i) all.emplace(std::vector<float>(ds.image(i).begin(), ds.image(i).end()), ds.labels[i]);
  for (const auto* part : {&train, &test}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      joined.emplace(std::vector<float>(part->image(i).begin(), part->image(i).end()), part->labels[i]);
    }
  }
  CHECK(all == joined);
  const auto [train2, test2] = split(ds, 0.8, 9);
  CHECK(train2 == train);
  CHECK(test2 == test);
  const auto [train3, test3] = split(ds, 0.8, 10);
  CHECK_FALSE(train3 == train);
  CHECK_THROWS_AS(split(ds, 0.0, 1), ContractError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), ContractError);
}

TEST_CASE("split proportions hold for random sizes") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Dataset ds;
    ds.height = ds.width = ds.channels = 1;
    ds.num_classes = 2 + rng.below(4);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      const std::size_t n = 2 + rng.below(40);
      for (std::size_t i = 0; i < n; ++i) {
        ds.labels.push_back(static_cast<int>(c));
        ds.pixels.push_back(static_cast<float>(rng.uniform()));
      }
    }
    const double frac = 0.05 + 0.9 * rng.uniform();
    const auto [train, test] = split(ds, frac, trial);
    CHECK(train.size() + test.size() == ds.size());
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      const auto n = static_cast<double>(ds.count_of(static_cast<int>(c)));
      const auto t = static_cast<double>(train.count_of(static_cast<int>(c)));
      CHECK(std::abs(t - frac * n) <= 1.0);
      CHECK(t >= 1.0);
      CHECK(t <= n - 1.0);
    }
  }
}

TEST_CASE("split rejects a class with a single sample") {
  Dataset ds;
  ds.height = ds.width = ds.channels = 1;
  ds.num_classes = 2;
  ds.labels = {0, 0, 0, 1};
  ds.pixels = {0.1f, 0.2f, 0.3f, 0.4f};
  CHECK_THROWS_AS(split(ds, 0.5, 0), ContractError);
}
