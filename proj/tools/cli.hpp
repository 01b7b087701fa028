#pragma once

// The `pieeg` command line: simulate, record, replay, analyze, serve, export.
// Results go to `out` as JSON (or CSV where asked); diagnostics go to `err`.

#include <iosfwd>
#include <string>
#include <vector>

namespace pieeg {

/// `args` excludes the program name. Returns the process exit status:
/// 0 on success, 1 for bad flags, missing files or format errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pieeg
