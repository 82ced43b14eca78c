#pragma once

namespace dmplug {

// Command-line harness entry point, exposed as a library function so tests
// can drive it in-process. Subcommands: train-score, sample, solve, regress,
// compare, spectra. Returns the process exit code: 0 on success, 2 on a
// configuration error, 3 on a runtime error.
int cli(int argc, const char* const* argv);

} // namespace dmplug
