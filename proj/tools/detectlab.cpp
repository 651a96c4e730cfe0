// SPDX-License-Identifier: Apache-2.0
#include "detectlab/cli/commands.hpp"

int main(int argc, char** argv) { return detectlab::cli::run_cli(argc, argv); }
