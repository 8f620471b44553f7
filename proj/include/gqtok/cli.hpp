#pragma once

// Command-line front end: train, encode, decode, stats, oracle, bench-memory.
//
// Every failure prints exactly one line to `err`:
//   error kind=<kind> message=<text>
// and returns a nonzero exit code (2 for usage errors, 1 otherwise).

#include <iosfwd>
#include <string>
#include <vector>

namespace gqtok {

/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gqtok
