#pragma once

#include <string>
#include <vector>

namespace suffixbench::cli {

// Entry point behind the binary. Exit codes: 0 success, 1 empty/missing data,
// 2 usage, 3 integrity mismatch.
int run(const std::vector<std::string>& args);

}  // namespace suffixbench::cli
