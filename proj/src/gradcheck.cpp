// SPDX-License-Identifier: Apache-2.0
#include "v2apt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "v2apt/rng.hpp"

namespace v2apt {

bool CheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
}

double CheckReport::worst_rel_error() const {
  double worst = 0.0;
  for (const auto& p : params) worst = std::max(worst, p.max_rel_error);
  return worst;
}

std::string CheckReport::summary() const {
  std::ostringstream os;
  os.precision(3);
  std::size_t ok = 0;
  for (const auto& p : params) ok += p.passed ? 1 : 0;
  os << (passed() ? "PASS" : "FAIL") << ": " << ok << "/" << params.size()
     << " parameters within tolerance " << tolerance << " (worst rel. error "
     << std::scientific << worst_rel_error() << ")";
  for (const auto& p : params) {
    if (!p.passed) os << "\n  " << p.name << ": rel. error " << p.max_rel_error;
  }
  if (!suspect_ops.empty()) {
    os << "\n  suspect ops:";
    for (const auto& op : suspect_ops) os << ' ' << op;
  }
  return os.str();
}

CheckReport finite_diff_check(const Objective& objective, std::vector<NamedTensor> params,
                              double eps, double tol, bool localize_faults) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.clear_grad();
  }

  std::vector<std::string> ops;
  {
    Tape<double> tape;
    const Tensor<double> loss = objective();
    if (!std::isfinite(loss.item())) {
      throw NumericError("finite_diff_check: objective is not finite at the base point");
    }
    tape.backward(loss);
    ops = tape.op_names();
  }

  CheckReport report;
  report.tolerance = tol;
  NoGradGuard no_grad;
  for (auto& p : params) {
    const std::size_t n = p.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    auto values = p.tensor.mutable_data();
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double fp = objective().item();
      values[i] = saved - eps;
      const double fm = objective().item();
      values[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_diff_check: non-finite objective while perturbing " + p.name +
                           "[" + std::to_string(i) + "]");
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      max_a = std::max(max_a, std::abs(analytic[i]));
      max_n = std::max(max_n, std::abs(numeric));
    }
    ParamCheck pc;
    pc.name = p.name;
    pc.elements = n;
    pc.max_abs_error = max_diff;
    const double denom = std::max(max_a, max_n);
    pc.max_rel_error = denom > 0.0 ? max_diff / denom : 0.0;
    pc.passed = std::isfinite(pc.max_rel_error) && pc.max_rel_error <= tol;
    report.params.push_back(std::move(pc));
  }

  if (localize_faults && !report.passed()) {
    const auto audited = audited_primitives();
    for (const auto& op : ops) {
      if (std::find(audited.begin(), audited.end(), op) == audited.end()) continue;
      if (audit_primitive(op) > 1e-6) report.suspect_ops.push_back(op);
    }
  }
  return report;
}

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

using Builder = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct Audit {
  std::vector<Shape> inputs;
  Builder build;
  double lo = -1.0;
  double hi = 1.0;
};

const std::map<std::string, Audit>& audits() {
  static const std::map<std::string, Audit> table = [] {
    std::map<std::string, Audit> t;
    using V = const std::vector<Tensor<double>>&;
    t["matmul"] = {{{3, 4}, {4, 2}}, [](V in) { return matmul(in[0], in[1]); }};
    t["batched_matmul"] = {{{2, 3, 4}, {2, 4, 2}, {2, 5, 4}}, [](V in) {
                             // Both layouts in one objective.
                             auto a = batched_matmul(in[0], in[1]);
                             auto b = batched_matmul(in[0], in[2], true);
                             return concat<double>({a, b}, 2);
                           }};
    t["add"] = {{{3, 4}, {3, 4}}, [](V in) { return add(in[0], in[1]); }};
    t["sub"] = {{{3, 4}, {3, 4}}, [](V in) { return sub(in[0], in[1]); }};
    t["mul"] = {{{3, 4}, {3, 4}}, [](V in) { return mul(in[0], in[1]); }};
    t["scale"] = {{{5}}, [](V in) { return scale(in[0], 1.7); }};
    t["add_scalar"] = {{{5}}, [](V in) { return add_scalar(in[0], -0.3); }};
    t["add_bias"] = {{{2, 3, 4}, {4}}, [](V in) { return add_bias(in[0], in[1]); }};
    t["reshape"] = {{{2, 6}}, [](V in) { return reshape(in[0], {3, 4}); }};
    t["permute"] = {{{2, 3, 4}}, [](V in) { return permute(in[0], {2, 0, 1}); }};
    t["concat"] = {{{2, 3}, {2, 1}}, [](V in) { return concat<double>({in[0], in[1]}, 1); }};
    t["slice"] = {{{3, 5}}, [](V in) { return slice(in[0], 1, 1, 4); }};
    t["sum"] = {{{3, 4}}, [](V in) { return sum(in[0]); }};
    t["sum_axis"] = {{{2, 3, 4}}, [](V in) { return sum(in[0], 1); }};
    t["gelu"] = {{{4, 3}}, [](V in) { return gelu(in[0]); }, -3.0, 3.0};
    t["exp"] = {{{4, 3}}, [](V in) { return exp(in[0]); }};
    t["clamp"] = {{{4, 3}}, [](V in) { return clamp(in[0], -0.5, 0.5); }};
    t["softmax"] = {{{3, 4}}, [](V in) {
                      return concat<double>({softmax(in[0], 0), softmax(in[0], 1)}, 0);
                    }};
    t["layer_norm"] = {{{3, 5}, {5}, {5}}, [](V in) { return layer_norm(in[0], in[1], in[2]); }};
    t["embedding"] = {{{4, 3}}, [](V in) {
                        static const std::size_t idx[] = {2, 0, 2, 3};
                        return embedding<double>(in[0], idx);
                      }};
    t["cross_entropy"] = {{{3, 4}}, [](V in) {
                            static const int labels[] = {0, 3, 1};
                            return cross_entropy<double>(in[0], labels);
                          }, -2.0, 2.0};
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> audited_primitives() {
  std::vector<std::string> names;
  for (const auto& [name, _] : audits()) names.push_back(name);
  return names;
}

double audit_primitive(const std::string& op, std::uint64_t seed) {
  const auto& table = audits();
  const auto it = table.find(op);
  if (it == table.end()) throw ContractError("no adjoint audit for primitive '" + op + "'");
  const Audit& audit = it->second;
  Rng rng = Rng(seed).split(op);
  std::vector<NamedTensor> params;
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < audit.inputs.size(); ++i) {
    auto t = random_tensor(audit.inputs[i], rng, audit.lo, audit.hi);
    // Keep clamp inputs away from the kinks.
    if (op == "clamp") {
      for (auto& v : t.mutable_data()) {
        if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 1.3;
      }
    }
    inputs.push_back(t);
    params.push_back({op + ".in" + std::to_string(i), t});
  }
  Tensor<double> weights;
  {
    NoGradGuard no_grad;
    const auto probe = audit.build(inputs);
    weights = random_tensor(probe.shape(), rng);
  }
  const Objective f = [&] { return sum(mul(audit.build(inputs), weights)); };
  const auto report = finite_diff_check(f, params, 1e-6, 1.0, false);
  return report.worst_rel_error();
}

}  // namespace v2apt
