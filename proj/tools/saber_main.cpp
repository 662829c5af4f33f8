// Copyright 2025 The Saber Sampling Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "saber/cli.hpp"

int main(int argc, char **argv) { return saber::cli::run(argc, argv, std::cout, std::cerr); }
