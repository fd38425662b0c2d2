#pragma once

#include <string>
#include <vector>

namespace dkl::cli {

/// Runs the command line (without the program name). Returns the exit code:
/// 0 on success, 2 on configuration or I/O errors, 3 on numerical failure.
int run(const std::vector<std::string> &args);

} // namespace dkl::cli
