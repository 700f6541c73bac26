#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace geomppca::cli {

/// Runs one CLI invocation. args excludes the program name. Returns the
/// process exit code; on failure every file written by the run is removed.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace geomppca::cli
