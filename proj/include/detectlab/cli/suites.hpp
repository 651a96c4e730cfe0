// SPDX-License-Identifier: Apache-2.0
//
// Reusable experiment drivers behind the command line: the per-module
// gradient checks and the box-regression loss bench.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "detectlab/grad_check.hpp"
#include "detectlab/loss/bbox.hpp"

namespace detectlab::cli {

/// Names accepted by module_gradcheck.
const std::vector<std::string>& gradcheck_modules();

/// Double-precision gradient check of one building block on small random
/// inputs. "conv" uses dilation 3; the box losses use a surrogate with the
/// detached terms frozen. Throws ArgumentError for an unknown module.
GradCheckReport module_gradcheck(const std::string& module, std::uint64_t seed, double tol);

struct LossBenchOptions {
  std::vector<loss::BoxLoss> losses{loss::BoxLoss::kCiou, loss::BoxLoss::kWiou1, loss::BoxLoss::kWiou3};
  Index steps = 500;
  std::uint64_t seed = 42;
  Index pairs = 256;
  double step_size = 2.0;  // plain gradient descent on (cx, cy, w, h)
};

struct LossBenchResult {
  std::vector<loss::BoxLoss> losses;
  // curves[l][s] = mean L_IoU over all pairs after s steps under losses[l].
  std::vector<std::vector<double>> curves;
};

/// Every loss starts from the same seeded pairs and descends independently.
/// WIoU v3 updates its focus state once per step with the mean L_IoU.
LossBenchResult run_loss_bench(const LossBenchOptions& options);

/// First step index whose value is below `threshold`, if any.
std::optional<Index> first_step_below(const std::vector<double>& curve, double threshold);

/// CSV with header "step,<loss names...>".
void write_loss_bench_csv(std::ostream& os, const LossBenchResult& result);

}  // namespace detectlab::cli
