// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace qnas {

// Command-line entry point. Subcommands: train, search, eval, export,
// ablate. Returns the process exit code; every validation or runtime
// failure prints "error: ..." to stderr and returns 1.
int run_cli(int argc, const char* const* argv);

} // namespace qnas
