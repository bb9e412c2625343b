// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "v2apt/gradcheck.hpp"
#include "v2apt/rng.hpp"
#include "v2apt/tensor.hpp"

using namespace v2apt;

namespace {

Tensor<double> t2(std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) {
  return Tensor<double>({r, c}, std::move(v), rg);
}

Tensor<double> random_tensor(Shape shape, Rng& rng, bool rg = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor<double>(std::move(shape), std::move(v), rg);
}

std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor shape must match data length") {
  CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  const auto z = Tensor<float>::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK_FALSE(z.has_grad());
}

TEST_CASE("matmul examples") {
  const auto eye = t2(2, 2, {1, 0, 0, 1});
  const auto m = t2(2, 2, {1, 2, 3, 4});
  CHECK(vec(matmul(eye, m)) == std::vector<double>{1, 2, 3, 4});
  CHECK(vec(matmul(m, t2(2, 1, {0, 1}))) == std::vector<double>{2, 4});
  Rng rng(3);
  const auto z = matmul(Tensor<double>::zeros({3, 5}), random_tensor({5, 2}, rng));
  CHECK(z.shape() == Shape{3, 2});
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  const auto a = softmax(Tensor<double>({3}, {0, 0, 0}), 0);
  for (double v : a.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
  const auto b = softmax(Tensor<double>({2}, {0, std::log(2.0)}), 0);
  CHECK(b.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(b.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  const auto c = softmax(Tensor<float>({2}, {1000.f, 1000.f}), 0);
  CHECK(c.data()[0] == 0.5f);
  CHECK(c.data()[1] == 0.5f);
  CHECK_THROWS(softmax(Tensor<double>({2}, {0, 0}), 1));
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({4, 7}, rng);
    for (auto& v : x.mutable_data()) v *= 30.0;
    for (std::size_t axis : {0u, 1u}) {
      const auto y = softmax(x, axis);
      const auto s = sum(y, axis);
      for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-6);
      for (double v : y.data()) CHECK(v > 0.0);
    }
  }
}

TEST_CASE("layer norm output is standardized before the affine map") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({6, 16}, rng);
    for (auto& v : x.mutable_data()) v = 3.0 * v + 2.0;
    const auto y = layer_norm(x, Tensor<double>::filled({16}, 1.0), Tensor<double>::zeros({16}));
    for (std::size_t r = 0; r < 6; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < 16; ++c) mean += y.data()[r * 16 + c];
      mean /= 16;
      for (std::size_t c = 0; c < 16; ++c) var += std::pow(y.data()[r * 16 + c] - mean, 2);
      var /= 16;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("concat then slice is the identity") {
  Rng rng(9);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4}, sb{2, 3, 4};
    sb[axis] = 5;
    const auto a = random_tensor(sa, rng), b = random_tensor(sb, rng);
    const auto c = concat<double>({a, b}, axis);
    CHECK(vec(slice(c, axis, 0, sa[axis])) == vec(a));
    CHECK(vec(slice(c, axis, sa[axis], sa[axis] + sb[axis])) == vec(b));
  }
}

TEST_CASE("backward examples") {
  SUBCASE("sum") {
    auto x = Tensor<double>({3}, {1, 2, 3}, true);
    Tape<double> tape;
    tape.backward(sum(x));
    CHECK(vec(Tensor<double>({3}, {x.grad().begin(), x.grad().end()})) == std::vector<double>{1, 1, 1});
  }
  SUBCASE("square") {
    auto x = Tensor<double>::scalar(3.0, true);
    Tape<double> tape;
    tape.backward(mul(x, x));
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("unreached leaves get zero grad") {
    auto x = Tensor<double>({2}, {1, 2}, true);
    auto y = Tensor<double>({2}, {3, 4}, true);
    Tape<double> tape;
    const auto unused = scale(y, 2.0);
    (void)unused;
    tape.backward(sum(x));
    REQUIRE(y.has_grad());
    CHECK(y.grad()[0] == 0.0);
    CHECK(y.grad()[1] == 0.0);
  }
  SUBCASE("non-scalar loss") {
    auto x = Tensor<double>({2}, {1, 2}, true);
    Tape<double> tape;
    const auto y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
  }
  SUBCASE("empty tape") {
    Tape<double> tape;
    CHECK_THROWS_AS(tape.backward(Tensor<double>::scalar(1.0)), ContractError);
  }
}

TEST_CASE("no tape means no recording") {
  auto x = Tensor<double>({2}, {1, 2}, true);
  const auto y = scale(x, 2.0);
  Tape<double> tape;
  {
    NoGradGuard guard;
    const auto z = scale(x, 3.0);
    (void)z;
  }
  CHECK(tape.size() == 0);
  (void)y;
}

TEST_CASE("every primitive adjoint matches finite differences") {
  for (const auto& op : audited_primitives()) {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const double err = audit_primitive(op, seed);
      INFO(op << " seed " << seed << " rel. error " << err);
      CHECK(err < 1e-6);
    }
  }
  CHECK_THROWS_AS(audit_primitive("no_such_op"), ContractError);
}

TEST_CASE("finite_diff_check on a quadratic form") {
  // f(x) = x^T A x with gradient (A + A^T) x; the check must agree with the
  // closed form as well as with differences.
  Rng rng(21);
  const auto a = random_tensor({4, 4}, rng);
  auto x = random_tensor({4, 1}, rng);
  auto f = [&] { return sum(mul(x, matmul(a, x))); };
  const auto report = finite_diff_check(f, {{"x", x}}, 1e-5, 1e-6);
  CHECK(report.passed());
  CHECK(report.params.size() == 1);
  const auto A = a.data();
  for (std::size_t i = 0; i < 4; ++i) {
    double g = 0.0;
    for (std::size_t j = 0; j < 4; ++j) g += (A[i * 4 + j] + A[j * 4 + i]) * x.data()[j];
    CHECK(x.grad()[i] == doctest::Approx(g).epsilon(1e-12));
  }
}

TEST_CASE("finite_diff_check names the op whose adjoint is corrupted") {
  Rng rng(4);
  auto x = random_tensor({3, 5}, rng);
  auto w = random_tensor({5, 2}, rng);
  auto f = [&] { return sum(gelu(matmul(x, w))); };
  REQUIRE(finite_diff_check(f, {{"x", x}, {"w", w}}, 1e-6, 1e-6).passed());
  ScopedAdjointFault fault("gelu", 1.5);
  const auto report = finite_diff_check(f, {{"x", x}, {"w", w}}, 1e-6, 1e-6);
  CHECK_FALSE(report.passed());
  REQUIRE(report.suspect_ops.size() == 1);
  CHECK(report.suspect_ops[0] == "gelu");
  CHECK(report.summary().find("gelu") != std::string::npos);
}

TEST_CASE("finite_diff_check rejects non-finite objectives with the parameter name") {
  auto x = Tensor<double>({1}, {700.0});
  auto f = [&] { return sum(exp(scale(x, 1.0))); };
  try {
    // exp(700 + eps) is finite but exp(710) is not.
    finite_diff_check(f, {{"big", x}}, 10.0, 1e-6);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("big") != std::string::npos);
  }
}

TEST_CASE("gradients are deterministic") {
  auto run = [] {
    Rng rng(8);
    auto x = random_tensor({3, 4}, rng, true);
    auto w = random_tensor({4, 4}, rng, true);
    Tape<double> tape;
    const auto y = softmax(gelu(matmul(x, w)), 1);
    tape.backward(sum(mul(y, y)));
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.insert(out.end(), y.data().begin(), y.data().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("random_normal is a tape constant") {
  Rng rng(2);
  auto n = random_normal<double>({4}, rng);
  CHECK_FALSE(n.requires_grad());
  Rng again(2);
  CHECK(vec(random_normal<double>({4}, again)) == vec(n));
}
