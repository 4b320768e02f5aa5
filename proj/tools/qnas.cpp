// SPDX-License-Identifier: Apache-2.0
#include "qnas/cli.hpp"

int main(int argc, char** argv) { return qnas::run_cli(argc, argv); }
