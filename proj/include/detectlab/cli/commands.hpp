// SPDX-License-Identifier: Apache-2.0
//
// The detectlab command line. Exit codes: 0 success, 1 invalid input or
// configuration, 2 numerical failure (non-finite loss or a failed gradient
// check).
#pragma once

#include <string>
#include <vector>

namespace detectlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitNumeric = 2;

/// `args[0]` is the program name, as in argv.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

/// The default four-row ablation grid as a JSON document.
std::string default_ablation_grid();

}  // namespace detectlab::cli
