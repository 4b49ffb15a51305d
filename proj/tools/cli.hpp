#pragma once

#include <string>
#include <vector>

namespace pm::cli {

// Exit codes: 0 success, 1 validation error or bad usage, 2 numerical failure.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace pm::cli
