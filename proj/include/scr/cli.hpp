#pragma once

// scregistrar subcommands: phantom, simulate, register, evaluate, overlay.

#include <ostream>
#include <string>
#include <vector>

namespace scr::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the
/// process exit status; diagnostics go to `err`, summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scr::cli
