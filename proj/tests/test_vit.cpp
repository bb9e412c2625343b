// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "v2apt/model.hpp"
#include "v2apt/rng.hpp"
#include "v2apt/trainer.hpp"

using namespace v2apt;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.layers = 2;
  c.dim = 12;
  c.heads = 3;
  c.mlp_ratio = 2;
  c.patch_size = 4;
  c.image_size = 8;
  c.channels = 3;
  c.num_classes = 3;
  c.prompt_tokens = 4;
  c.instance_tokens = 2;
  c.latent_dim = 3;
  c.vae_hidden = 6;
  return c;
}

// Plain-loop reference pieces for the single-token closed form.
std::vector<double> ref_ln(const std::vector<double>& x, std::span<const double> g, std::span<const double> b) {
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-6) * g[i] + b[i];
  return out;
}

// y = x W[:, col0:col0+n] + bias[col0:col0+n] with W of width `cols`.
std::vector<double> ref_affine(const std::vector<double>& x, std::span<const double> w, std::span<const double> bias,
                               std::size_t cols, std::size_t col0, std::size_t n) {
  std::vector<double> y(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = bias[col0 + j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i * cols + col0 + j];
    y[j] = s;
  }
  return y;
}

}  // namespace

TEST_CASE("patch embedding shapes and linearity") {
  ModelConfig c;  // 16x16 images, patch 4
  Rng rng(1);
  const auto bb = BackboneParams<double>::init(c, rng);
  const auto e = patch_embed(Tensor<double>::zeros({16, 16, 3}), bb, c);
  CHECK(e.shape() == Shape{16, c.dim});
  for (std::size_t p = 0; p < 16; ++p) {
    for (std::size_t j = 0; j < c.dim; ++j) {
      CHECK(e.data()[p * c.dim + j] == doctest::Approx(bb.patch_bias.data()[j] + bb.pos_embed.data()[p * c.dim + j]));
    }
  }
  CHECK(patch_embed(Tensor<double>::zeros({2, 16, 16, 3}), bb, c).shape() == Shape{2, 16, c.dim});
  CHECK_THROWS_AS(patch_embed(Tensor<double>::zeros({15, 15, 3}), bb, c), ConfigError);
}

TEST_CASE("patch embedding flattens each patch row-major") {
  ModelConfig c;
  c.image_size = 8;
  Rng rng(2);
  const auto bb = BackboneParams<double>::init(c, rng);
  std::vector<double> px(8 * 8 * 3);
  Rng pr(3);
  for (auto& v : px) v = pr.uniform();
  const auto e = patch_embed(Tensor<double>({8, 8, 3}, px), bb, c);
  // Patch (1, 0): rows 4..7, columns 0..3.
  std::vector<double> flat;
  for (std::size_t y = 4; y < 8; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) flat.push_back(px[(y * 8 + x) * 3 + ch]);
  const auto ref = ref_affine(flat, bb.patch_weight.data(), bb.patch_bias.data(), c.dim, 0, c.dim);
  for (std::size_t j = 0; j < c.dim; ++j) {
    CHECK(e.data()[2 * c.dim + j] == doctest::Approx(ref[j] + bb.pos_embed.data()[2 * c.dim + j]).epsilon(1e-12));
  }
}

TEST_CASE("single-token layer matches the closed form") {
  // With one token the attention weights are exactly 1, so the block reduces to
  // x1 = x + (LN1(x) Wv + bv) Wo + bo and out = x1 + MLP(LN2(x1)).
  auto c = small_config();
  Rng rng(4);
  auto bb = BackboneParams<double>::init(c, rng);
  auto& l = bb.layers[0];
  for (auto* t : {&l.ln1_gamma, &l.ln1_beta, &l.qkv_bias, &l.proj_bias, &l.ln2_gamma, &l.ln2_beta, &l.fc1_bias,
                  &l.fc2_bias}) {
    for (auto& v : t->mutable_data()) v += rng.uniform(-0.5, 0.5);
  }
  std::vector<double> x(c.dim);
  for (auto& v : x) v = rng.uniform(-1, 1);
  const auto out = encoder_layer_forward(0, Tensor<double>({1, c.dim}, x), bb, c);

  const std::size_t d = c.dim, h = d * c.mlp_ratio;
  const auto a = ref_ln(x, l.ln1_gamma.data(), l.ln1_beta.data());
  const auto v = ref_affine(a, l.qkv_weight.data(), l.qkv_bias.data(), 3 * d, 2 * d, d);
  const auto o = ref_affine(v, l.proj_weight.data(), l.proj_bias.data(), d, 0, d);
  std::vector<double> x1(d);
  for (std::size_t i = 0; i < d; ++i) x1[i] = x[i] + o[i];
  auto m = ref_affine(ref_ln(x1, l.ln2_gamma.data(), l.ln2_beta.data()), l.fc1_weight.data(), l.fc1_bias.data(), h, 0, h);
  for (auto& u : m) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
  const auto m2 = ref_affine(m, l.fc2_weight.data(), l.fc2_bias.data(), d, 0, d);
  for (std::size_t i = 0; i < d; ++i) CHECK(out.data()[i] == doctest::Approx(x1[i] + m2[i]).epsilon(1e-12));
}

TEST_CASE("encoder layer preserves shape and treats identical tokens identically") {
  auto c = small_config();
  Rng rng(5);
  const auto bb = BackboneParams<double>::init(c, rng);
  for (std::size_t s : {1u, 2u, 5u, 9u}) {
    std::vector<double> x(2 * s * c.dim);
    for (auto& v : x) v = rng.uniform(-1, 1);
    CHECK(encoder_layer_forward(1, Tensor<double>({2, s, c.dim}, x), bb, c).shape() == Shape{2, s, c.dim});
  }
  std::vector<double> x(3 * c.dim);
  for (auto& v : x) v = rng.uniform(-1, 1);
  std::copy(x.begin(), x.begin() + c.dim, x.begin() + 2 * c.dim);  // token 2 == token 0
  const auto y = encoder_layer_forward(0, Tensor<double>({3, c.dim}, x), bb, c);
  for (std::size_t j = 0; j < c.dim; ++j) CHECK(y.data()[j] == doctest::Approx(y.data()[2 * c.dim + j]).epsilon(1e-14));
  CHECK_THROWS_AS(encoder_layer_forward(0, Tensor<double>::zeros({3, c.dim + 1}), bb, c), ShapeError);
  CHECK_THROWS(encoder_layer_forward(c.layers, Tensor<double>::zeros({3, c.dim}), bb, c));
}

TEST_CASE("classify examples") {
  auto c = small_config();
  Rng rng(6);
  auto bb = BackboneParams<double>::init(c, rng);
  std::vector<double> x(c.dim);
  for (auto& v : x) v = rng.uniform(-1, 1);
  bb.head_weight = Tensor<double>::zeros({c.dim, 3});
  bb.head_bias = Tensor<double>::zeros({3});
  const auto zero_logits = classify(Tensor<double>({c.dim}, x), bb);
  for (double v : zero_logits.data()) CHECK(v == 0.0);

  std::vector<double> eye(c.dim * c.dim, 0.0);
  for (std::size_t i = 0; i < c.dim; ++i) eye[i * c.dim + i] = 1.0;
  bb.head_weight = Tensor<double>({c.dim, c.dim}, eye);
  bb.head_bias = Tensor<double>::zeros({c.dim});
  const auto logits = classify(Tensor<double>({c.dim}, x), bb);
  for (std::size_t i = 0; i < c.dim; ++i) CHECK(logits.data()[i] == x[i]);

  const std::vector<int> labels{0, 2, 1, 2};
  const auto ce = cross_entropy(Tensor<double>::zeros({4, 10}), labels);
  CHECK(ce.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("freeze mask covers exactly the backbone") {
  auto c = small_config();
  Model<float> model(c, 1);
  const auto mask = model.freeze();
  std::size_t backbone = 0;
  for (const auto& p : model.parameters()) {
    const bool is_backbone = p.name.rfind("backbone.", 0) == 0;
    backbone += is_backbone;
    CHECK(mask.contains(p.name) == is_backbone);
    CHECK(p.trainable == !is_backbone);
    CHECK(p.tensor.requires_grad() == !is_backbone);
  }
  // patch weight/bias, pos, cls, 12 per layer, final norm.
  CHECK(backbone == 4 + 12 * c.layers + 2);
  CHECK(mask.frozen.size() == backbone);
  CHECK(model.freeze().frozen == mask.frozen);  // idempotent
  CHECK(mask.contains("backbone.cls_token"));
  CHECK(mask.contains("backbone.patch.weight"));
  CHECK(mask.contains("backbone.norm.gamma"));
  CHECK_FALSE(mask.contains("head.weight"));
}

TEST_CASE("frozen buffers survive optimizer steps; head moves") {
  auto c = small_config();
  Model<float> model(c, 3);
  model.freeze();
  const auto before = frozen_hash(model);
  const std::vector<float> head0(model.find("head.weight")->tensor.data().begin(),
                                 model.find("head.weight")->tensor.data().end());
  AdamW<float> opt;
  Rng rng(9);
  std::vector<float> px(4 * 8 * 8 * 3);
  for (int step = 0; step < 100; ++step) {
    for (auto& v : px) v = static_cast<float>(rng.uniform());
    const std::vector<int> labels{0, 1, 2, 1};
    Tape<float> tape;
    Rng eps = rng.split(static_cast<std::uint64_t>(step));
    const auto out = model.forward(Tensor<float>({4, 8, 8, 3}, px), SampleMode::train, &eps);
    tape.backward(total_loss(out.logits, labels, out.kl, 1e-3).total);
    opt.step(model.parameters());
  }
  CHECK(frozen_hash(model) == before);
  const auto head1 = model.find("head.weight")->tensor.data();
  CHECK_FALSE(std::equal(head1.begin(), head1.end(), head0.begin()));
}

TEST_CASE("forward is deterministic and leaves parameters untouched") {
  auto c = small_config();
  Model<double> model(c, 2);
  Rng rng(1);
  std::vector<double> px(2 * 8 * 8 * 3);
  for (auto& v : px) v = rng.uniform();
  const Tensor<double> img({2, 8, 8, 3}, px);
  const auto h0 = [&] {
    std::string s;
    for (const auto& p : model.parameters()) {
      s.append(reinterpret_cast<const char*>(p.tensor.data().data()), p.tensor.data().size_bytes());
    }
    return fnv1a64(s);
  };
  const auto before = h0();
  const auto a = model.forward(img, SampleMode::eval);
  const auto b = model.forward(img, SampleMode::eval);
  CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), b.logits.data().begin()));
  CHECK(h0() == before);
}
