// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "v2apt/tensor.hpp"

namespace v2apt {

struct NamedTensor {
  std::string name;
  Tensor<double> tensor;
};

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_abs_error = 0.0;
  /// max |analytic - numeric| over the tensor, divided by the larger of the
  /// two gradients' max-norms.
  double max_rel_error = 0.0;
  bool passed = false;
};

struct CheckReport {
  std::vector<ParamCheck> params;
  /// When the check fails: primitives on the objective's tape whose own
  /// adjoint audit also fails.
  std::vector<std::string> suspect_ops;
  double tolerance = 0.0;

  bool passed() const;
  double worst_rel_error() const;
  std::string summary() const;
};

using Objective = std::function<Tensor<double>()>;

/// Compares reverse-mode gradients of `objective` against central finite
/// differences for every element of every tensor in `params`. The objective
/// must be deterministic; it is evaluated 1 + 2·(element count) times.
CheckReport finite_diff_check(const Objective& objective, std::vector<NamedTensor> params,
                              double eps, double tol, bool localize_faults = true);

/// Primitives with an isolated adjoint audit.
std::vector<std::string> audited_primitives();

/// Max relative gradient error of one primitive on random 64-bit inputs.
/// Throws ContractError for an unknown name.
double audit_primitive(const std::string& op, std::uint64_t seed = 0);

}  // namespace v2apt
