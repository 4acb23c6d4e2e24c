#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace irview::cli {

/// Runs one subcommand. Returns 0 on success, 2 on usage errors and 1 on any other failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace irview::cli
