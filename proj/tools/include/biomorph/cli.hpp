#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace biomorph::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the
/// process exit code; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace biomorph::cli
