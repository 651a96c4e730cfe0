// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "detectlab/tensor.hpp"

namespace detectlab {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Total coordinates probed across all inputs; every coordinate when the
  // inputs are smaller than this.
  Index max_coords = 128;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  Index coords_checked = 0;
  std::string worst;  // "input#i[j]: analytic=... numeric=..."
};

using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Compares reverse-mode gradients of `f` against central differences
///   (f(x+h) - f(x-h)) / 2h
/// with relative error |a - n| / max(1e-12, |a| + |n|).
///
/// `surrogate`, when given, is evaluated for the numeric side instead of `f`.
/// It should reproduce `f` with every detached subexpression frozen at its
/// value at the unperturbed inputs.
GradCheckReport grad_check(const ScalarFn& f, std::vector<TensorD> inputs,
                           const GradCheckOptions& options = {},
                           const ScalarFn& surrogate = nullptr);

double relative_error(double analytic, double numeric);

}  // namespace detectlab
