// Copyright (c) 2026 erpcond authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "erpcond/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return erpcond::cli::run_cli(std::move(args), std::cout, std::cerr);
}
