#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mqvr::cli {

/// Runs the `mqvr` command line (args excludes the program name). Returns the exit
/// code; 0 iff every output was written. Outputs of a failed run are removed.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mqvr::cli
