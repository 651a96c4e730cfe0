// SPDX-License-Identifier: Apache-2.0
#include "detectlab/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "detectlab/rng.hpp"

namespace detectlab {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

GradCheckReport grad_check(const ScalarFn& f, std::vector<TensorD> inputs,
                           const GradCheckOptions& options, const ScalarFn& surrogate) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const TensorD y = f(inputs);
  if (y.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  y.backward();

  // Flattened coordinate list (input, element).
  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (Index j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  if (static_cast<Index>(coords.size()) > options.max_coords) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < static_cast<std::size_t>(options.max_coords); ++i) {
      const auto j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(static_cast<std::size_t>(options.max_coords));
  }

  const ScalarFn& numeric_fn = surrogate ? surrogate : f;
  GradCheckReport report;
  report.pass = true;
  NoGradGuard no_grad;
  for (const auto& [i, j] : coords) {
    TensorD& x = inputs[i];
    const double analytic = x.has_grad() ? x.grad()[static_cast<std::size_t>(j)] : 0.0;
    const double saved = x[j];
    x[j] = saved + options.step;
    const double fp = numeric_fn(inputs).item();
    x[j] = saved - options.step;
    const double fm = numeric_fn(inputs).item();
    x[j] = saved;
    const double numeric = (fp - fm) / (2.0 * options.step);
    const double err = relative_error(analytic, numeric);
    ++report.coords_checked;
    if (err > report.max_rel_err || report.worst.empty()) {
      report.max_rel_err = std::max(report.max_rel_err, err);
      if (err >= report.max_rel_err) {
        std::ostringstream os;
        os.precision(12);
        os << "input#" << i << "[" << j << "]: analytic=" << analytic << " numeric=" << numeric;
        report.worst = os.str();
      }
    }
    if (!(err <= options.tol)) report.pass = false;
  }
  return report;
}

}  // namespace detectlab
