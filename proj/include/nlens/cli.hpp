#pragma once

#include <string>
#include <vector>

namespace nlens::cli {

// Entry point behind the nlens executable. Returns 0 on success, 2 on usage
// errors and 1 on data or validation errors.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace nlens::cli
