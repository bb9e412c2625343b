// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "v2apt/rng.hpp"
#include "v2apt/tensor.hpp"

namespace v2apt {

namespace {

template <typename T>
Tape<T>* active_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) return nullptr;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Extents before, at, and after `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// c[m×n] (+)= op(a)[m×k] · op(b)[k×n]. With ta, a is stored k×m; with tb, b
// is stored n×k.
template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  std::vector<T> abuf;
  std::vector<T> bbuf;
  if (ta) {
    abuf.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) abuf[i * k + p] = a[p * m + i];
    a = abuf.data();
  }
  if (tb) {
    bbuf.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bbuf[p * n + j] = b[j * k + p];
    b = bbuf.data();
  }
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> data) {
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  auto result = make_output<T>({m, n}, std::move(out));
  if (auto* tape = active_tape<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("matmul", {a, b}, result, [a, b, m, n, k](std::span<const T> g) mutable {
      if (a.requires_grad())
        gemm(false, true, m, k, n, g.data(), b.data().data(), a.mutable_grad().data(), true);
      if (b.requires_grad())
        gemm(true, false, k, n, m, a.data().data(), g.data(), b.mutable_grad().data(), true);
    });
  }
  return result;
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require_defined(a, "batched_matmul");
  require_defined(b, "batched_matmul");
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
  if (!ok) {
    throw ShapeError("batched_matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(false, transpose_b, m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
         out.data() + i * m * n, false);
  }
  auto result = make_output<T>({batch, m, n}, std::move(out));
  if (auto* tape = active_tape<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("batched_matmul", {a, b}, result,
                 [a, b, batch, m, n, k, transpose_b](std::span<const T> g) mutable {
                   for (std::size_t i = 0; i < batch; ++i) {
                     const T* gi = g.data() + i * m * n;
                     const T* ai = a.data().data() + i * m * k;
                     const T* bi = b.data().data() + i * k * n;
                     if (a.requires_grad()) {
                       // dA = G · op(B)^T
                       gemm(false, !transpose_b, m, k, n, gi, bi,
                            a.mutable_grad().data() + i * m * k, true);
                     }
                     if (b.requires_grad()) {
                       T* gb = b.mutable_grad().data() + i * k * n;
                       if (transpose_b) {
                         gemm(true, false, n, k, m, gi, ai, gb, true);  // dB[n×k] = G^T A
                       } else {
                         gemm(true, false, k, n, m, ai, gi, gb, true);  // dB[k×n] = A^T G
                       }
                     }
                   }
                 });
  }
  return result;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto result = make_output<T>(a.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("add", {a, b}, result, [a, b](std::span<const T> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  auto result = make_output<T>(a.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("sub", {a, b}, result, [a, b](std::span<const T> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto result = make_output<T>(a.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&a, &b})) {
    result.set_requires_grad(true);
    tape->record("mul", {a, b}, result, [a, b](std::span<const T> g) mutable {
      const auto ad = a.data(), bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  require_defined(x, "scale");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("scale", {x}, result, [x, factor](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return result;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  require_defined(x, "add_scalar");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + value;
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("add_scalar", {x}, result, [x](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (x.rank() < 1 || bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    throw ShapeError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bd[j];
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x, &bias})) {
    result.set_requires_grad(true);
    tape->record("add_bias", {x, bias}, result, [x, bias, rows, n](std::span<const T> g) mutable {
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto result = make_output<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("reshape", {x}, result, [x](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

namespace {

// For each output position in row-major order, the linear index of the
// source element.
std::vector<std::size_t> permute_map(const Shape& in, const std::vector<std::size_t>& axes,
                                     Shape& out_shape) {
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  out_shape.resize(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[axes[i]];
    strides[i] = in_strides[axes[i]];
  }
  const std::size_t total = shape_numel(in);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  std::vector<std::size_t> sorted(axes);
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(x.rank());
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  if (sorted != expect) {
    throw ShapeError("permute: axes are not a permutation of rank " + std::to_string(x.rank()) +
                     " for shape " + shape_str(x.shape()));
  }
  Shape out_shape;
  auto map = permute_map(x.shape(), axes, out_shape);
  std::vector<T> out(map.size());
  const auto xd = x.data();
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = xd[map[o]];
  auto result = make_output<T>(std::move(out_shape), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("permute", {x}, result, [x, map = std::move(map)](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_defined(x, "transpose");
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(ref));
  }
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = i == axis || p.dim(i) == ref[i];
    if (!ok) {
      throw ShapeError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(ref) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<T> out(shape_numel(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * s.inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pd.data() + o * block, block, out.data() + o * s.len * s.inner + offset * s.inner);
    }
    offset += p.dim(axis);
  }
  auto result = make_output<T>(std::move(out_shape), std::move(out));
  Tape<T>* tape = Tape<T>::current();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape && any) {
    result.set_requires_grad(true);
    tape->record("concat", parts, result, [parts, offsets, s, axis](std::span<const T> g) mutable {
      for (std::size_t i = 0; i < parts.size(); ++i) {
        auto& p = parts[i];
        if (!p.requires_grad()) continue;
        const std::size_t block = p.dim(axis) * s.inner;
        auto gp = p.mutable_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const T* src = g.data() + o * s.len * s.inner + offsets[i] * s.inner;
          T* dst = gp.data() + o * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(x, "slice");
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * s.inner;
  std::vector<T> out(s.outer * block);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xd.data() + o * s.len * s.inner + begin * s.inner, block, out.data() + o * block);
  }
  auto result = make_output<T>(std::move(out_shape), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("slice", {x}, result, [x, s, begin, block](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        T* dst = gx.data() + o * s.len * s.inner + begin * s.inner;
        const T* src = g.data() + o * block;
        for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  auto result = Tensor<T>::scalar(static_cast<T>(acc));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("sum", {x}, result, [x](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (auto& v : gx) v += g[0];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  require_defined(x, "sum");
  if (axis >= x.rank()) {
    throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xd[(o * s.len + l) * s.inner + i];
  auto result = make_output<T>(std::move(out_shape), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("sum_axis", {x}, result, [x, s](std::span<const T> g) mutable {
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
          for (std::size_t i = 0; i < s.inner; ++i)
            gx[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  const std::size_t len = x.dim(axis);
  if (len == 0) throw ShapeError("mean: empty axis in " + shape_str(x.shape()));
  return scale(sum(x, axis), static_cast<T>(1.0 / static_cast<double>(len)));
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_defined(x, "gelu");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
  }
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("gelu", {x}, result, [x](std::span<const T> g) mutable {
      const auto xd = x.data();
      auto gx = x.mutable_grad();
      const T inv_sqrt2 = static_cast<T>(std::numbers::sqrt2 / 2);
      const T inv_sqrt2pi = static_cast<T>(std::numbers::inv_sqrtpi * std::numbers::sqrt2 / 2);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xd[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  require_defined(x, "exp");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xd[i]);
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("exp", {x}, result, [x, result](std::span<const T> g) mutable {
      const auto yd = result.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yd[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  require_defined(x, "clamp");
  if (!(lo <= hi)) throw ContractError("clamp: lower bound exceeds upper bound");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xd[i], lo, hi);
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("clamp", {x}, result, [x, lo, hi](std::span<const T> g) mutable {
      const auto xd = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xd[i] >= lo && xd[i] <= hi) gx[i] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xd[base + l * s.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const T e = std::exp(xd[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        total += e;
      }
      const T inv = static_cast<T>(1.0 / total);
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] *= inv;
    }
  }
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x})) {
    result.set_requires_grad(true);
    tape->record("softmax", {x}, result, [x, result, s](std::span<const T> g) mutable {
      const auto yd = result.data();
      auto gx = x.mutable_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          double dot = 0.0;
          for (std::size_t l = 0; l < s.len; ++l) {
            const std::size_t p = base + l * s.inner;
            dot += static_cast<double>(g[p]) * yd[p];
          }
          const T d = static_cast<T>(dot);
          for (std::size_t l = 0; l < s.len; ++l) {
            const std::size_t p = base + l * s.inner;
            gx[p] += yd[p] * (g[p] - d);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  require_defined(x, "layer_norm");
  require_defined(gamma, "layer_norm");
  require_defined(beta, "layer_norm");
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != x.shape().back() ||
      beta.dim(0) != x.shape().back()) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " incompatible with gamma " +
                     shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<T>(rs);
    for (std::size_t j = 0; j < n; ++j) {
      const T h = static_cast<T>((row[j] - mu) * rs);
      xhat[r * n + j] = h;
      out[r * n + j] = h * gd[j] + bd[j];
    }
  }
  auto result = make_output<T>(x.shape(), std::move(out));
  if (auto* tape = active_tape<T>({&x, &gamma, &beta})) {
    result.set_requires_grad(true);
    tape->record("layer_norm", {x, gamma, beta}, result,
                 [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                  n](std::span<const T> g) mutable {
                   const auto gd = gamma.data();
                   if (gamma.requires_grad()) {
                     auto gg = gamma.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
                   }
                   if (beta.requires_grad()) {
                     auto gb = beta.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                   }
                   if (x.requires_grad()) {
                     auto gx = x.mutable_grad();
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const double dh = static_cast<double>(g[r * n + j]) * gd[j];
                         m1 += dh;
                         m2 += dh * xhat[r * n + j];
                       }
                       m1 /= static_cast<double>(n);
                       m2 /= static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         const double dh = static_cast<double>(g[r * n + j]) * gd[j];
                         gx[r * n + j] +=
                             static_cast<T>(rstd[r] * (dh - m1 - xhat[r * n + j] * m2));
                       }
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> indices) {
  require_defined(table, "embedding");
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  }
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw ShapeError("embedding: index " + std::to_string(indices[i]) + " out of range for " +
                       shape_str(table.shape()));
    }
    std::copy_n(td.data() + indices[i] * d, d, out.data() + i * d);
  }
  auto result = make_output<T>({indices.size(), d}, std::move(out));
  if (auto* tape = active_tape<T>({&table})) {
    result.set_requires_grad(true);
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape->record("embedding", {table}, result, [table, idx = std::move(idx), d](std::span<const T> g) mutable {
      auto gt = table.mutable_grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
    });
  }
  return result;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(c) + ")");
    }
  }
  const auto ld = logits.data();
  std::vector<T> probs(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = ld.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double lse = static_cast<double>(mx) + std::log(z);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j)
      probs[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
  }
  auto result = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b)));
  if (auto* tape = active_tape<T>({&logits})) {
    result.set_requires_grad(true);
    std::vector<int> lab(labels.begin(), labels.end());
    tape->record("cross_entropy", {logits}, result,
                 [logits, probs = std::move(probs), lab = std::move(lab), b, c](std::span<const T> g) mutable {
                   auto gl = logits.mutable_grad();
                   const T s = g[0] / static_cast<T>(b);
                   for (std::size_t i = 0; i < b; ++i) {
                     for (std::size_t j = 0; j < c; ++j) {
                       const T onehot = static_cast<int>(j) == lab[i] ? T(1) : T(0);
                       gl[i * c + j] += s * (probs[i * c + j] - onehot);
                     }
                   }
                 });
  }
  return result;
}

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng) {
  std::vector<T> out(shape_numel(shape));
  for (auto& v : out) v = static_cast<T>(rng.normal());
  return Tensor<T>(std::move(shape), std::move(out), false);
}

#define V2APT_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool);                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                         \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);              \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                      \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                   \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                           \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::size_t>);               \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                   \
  template Tensor<T> random_normal(Shape, Rng&);

V2APT_INSTANTIATE_OPS(float)
V2APT_INSTANTIATE_OPS(double)

#undef V2APT_INSTANTIATE_OPS

}  // namespace v2apt
