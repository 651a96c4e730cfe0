// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <string_view>

namespace detectlab {

inline void log_warning(std::string_view message) {
  std::clog << "[warn] " << message << '\n';
}

inline void log_info(std::string_view message) {
  std::clog << "[info] " << message << '\n';
}

}  // namespace detectlab
