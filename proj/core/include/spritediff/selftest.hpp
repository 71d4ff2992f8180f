#pragma once

#include <ostream>

namespace spritediff {

// Compact oracle/invariant suite behind the `selftest` CLI subcommand.
// Prints one line per check; returns the number of failures.
int run_selftest(std::ostream& os);

}  // namespace spritediff
