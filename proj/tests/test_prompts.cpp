// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "v2apt/model.hpp"
#include "v2apt/rng.hpp"

using namespace v2apt;

namespace {

template <typename T>
std::vector<T> vec(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

Tensor<double> random_tokens(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("domain prompt init") {
  ModelConfig c;
  c.instance_tokens = 3;
  Rng a(5), b(5);
  const auto p = init_domain_prompts<float>(c, a);
  const auto q = init_domain_prompts<float>(c, b);
  REQUIRE(p.layers.size() == c.layers);
  const double v = std::sqrt(6.0 / (2.0 * static_cast<double>(c.dim)));
  for (std::size_t i = 0; i < c.layers; ++i) {
    CHECK(p.layers[i].shape() == Shape{c.domain_tokens(), c.dim});
    CHECK(vec(p.layers[i]) == vec(q.layers[i]));
    for (float x : p.layers[i].data()) CHECK(std::abs(x) <= v);
  }
  c.instance_tokens = c.prompt_tokens;
  Rng r(1);
  const auto empty = init_domain_prompts<float>(c, r);
  REQUIRE(empty.layers.size() == c.layers);
  for (const auto& t : empty.layers) CHECK(t.numel() == 0);
}

TEST_CASE("first-layer injection lengths") {
  ModelConfig c;  // 16 patches
  Rng rng(2);
  const auto bb = BackboneParams<double>::init(c, rng);
  const auto patches = random_tokens({2, 16, c.dim}, rng);
  const auto r8 = inject_first_layer(random_tokens({2, 8, c.dim}, rng), patches, bb.cls_token, bb, c);
  CHECK(r8.layout.length() == 25);
  CHECK(r8.output.shape() == Shape{2, 25, c.dim});
  const auto r0 = inject_first_layer(Tensor<double>::zeros({2, 0, c.dim}), patches, bb.cls_token, bb, c);
  CHECK(r0.layout.length() == 17);
  CHECK(r0.output.shape() == Shape{2, 17, c.dim});
  CHECK_THROWS_AS(inject_first_layer(random_tokens({2, 8, c.dim + 1}, rng), patches, bb.cls_token, bb, c),
                  ShapeError);
}

TEST_CASE("strip removes exactly the prompt segment") {
  ModelConfig c;
  Rng rng(3);
  const auto seq = random_tokens({2, 25, c.dim}, rng);
  const SequenceLayout layout{8, 16};
  const auto s = strip_prompt_tokens(seq, layout);
  CHECK(s.shape() == Shape{2, 17, c.dim});
  CHECK(vec(slice(s, 1, 0, 1)) == vec(slice(seq, 1, 0, 1)));
  CHECK(vec(slice(s, 1, 1, 17)) == vec(slice(seq, 1, 9, 25)));
  const auto plain = random_tokens({2, 17, c.dim}, rng);
  CHECK(strip_prompt_tokens(plain, SequenceLayout{0, 16}).is_same(plain));
  CHECK_THROWS_AS(strip_prompt_tokens(seq, SequenceLayout{4, 16}), ShapeError);
}

TEST_CASE("deep injection splices fresh prompts into the previous layer's outputs") {
  ModelConfig c;
  c.layers = 2;
  Rng rng(4);
  const auto bb = BackboneParams<double>::init(c, rng);
  const auto patches = random_tokens({2, 16, c.dim}, rng);
  const auto p1 = random_tokens({2, 8, c.dim}, rng);
  const auto p2 = random_tokens({2, 8, c.dim}, rng);
  const auto z1 = inject_first_layer(p1, patches, bb.cls_token, bb, c);
  const auto stripped = strip_prompt_tokens(z1.output, z1.layout);
  const auto z2 = inject_deep(p2, stripped, 1, bb, c);
  // Reference: layer 2 input is [CLS_out1; P2; patches_out1].
  const auto expected_input =
      concat<double>({slice(z1.output, 1, 0, 1), p2, slice(z1.output, 1, 9, 25)}, 1);
  const auto expected = encoder_layer_forward(1, expected_input, bb, c);
  CHECK(vec(z2.output) == vec(expected));
  CHECK(z2.layout.length() == z1.layout.length());
  // Feeding stale prompt outputs instead would give something else.
  const auto stale = encoder_layer_forward(1, z1.output, bb, c);
  CHECK(vec(stale) != vec(z2.output));
  CHECK_THROWS_AS(inject_deep(p2, z1.output, 1, bb, c), ShapeError);
}

TEST_CASE("k = 0 deep pipeline equals a promptless forward") {
  ModelConfig c;
  c.layers = 3;
  c.prompt_tokens = 0;
  c.instance_tokens = 0;
  Rng rng(5);
  const auto bb = BackboneParams<double>::init(c, rng);
  const auto patches = random_tokens({2, 16, c.dim}, rng);
  const auto none = Tensor<double>::zeros({2, 0, c.dim});
  auto r = inject_first_layer(none, patches, bb.cls_token, bb, c);
  for (std::size_t i = 1; i < c.layers; ++i) r = inject_deep(none, strip_prompt_tokens(r.output, r.layout), i, bb, c);

  auto x = concat<double>({broadcast_rows(bb.cls_token, 2), patches}, 1);
  for (std::size_t i = 0; i < c.layers; ++i) x = encoder_layer_forward(i, x, bb, c);
  CHECK(vec(r.output) == vec(x));
}

TEST_CASE("every layer's prompts receive gradient") {
  ModelConfig c;
  c.layers = 3;
  c.dim = 12;
  c.heads = 2;
  c.image_size = 8;
  c.num_classes = 3;
  c.instance_tokens = 2;
  c.latent_dim = 3;
  c.vae_hidden = 8;
  Model<double> model(c, 7);
  model.freeze();
  Rng rng(8);
  const auto img = random_tokens({3, 8, 8, 3}, rng);
  const std::vector<int> labels{0, 1, 2};
  Tape<double> tape;
  Rng eps(1);
  const auto out = model.forward(img, SampleMode::train, &eps);
  tape.backward(cross_entropy(out.logits, labels));
  for (const auto& t : model.prompts().layers) {
    REQUIRE(t.has_grad());
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
  for (const auto& p : model.parameters()) {
    if (p.name.rfind("vae.", 0) == 0) {
      REQUIRE(p.tensor.has_grad());
    }
  }
}

TEST_CASE("layer input length is constant across layers") {
  ModelConfig c;
  c.image_size = 8;
  Model<float> model(c, 1);
  Rng rng(2);
  std::vector<float> px(2 * 8 * 8 * 3, 0.5f);
  ForwardTrace<float> trace;
  model.forward(Tensor<float>({2, 8, 8, 3}, px), SampleMode::eval, nullptr, &trace);
  REQUIRE(trace.layer_input_lengths.size() == c.layers);
  for (auto n : trace.layer_input_lengths) CHECK(n == 1 + c.prompt_tokens + c.num_patches());
}
