#pragma once

#include <optional>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace pm::cli {

inline constexpr const char* kProgramVersion = "1.0.0";

// A parsed command line with flag overrides already folded into `config`.
struct Invocation {
  std::string command;
  RunConfig config;
  bool seed_given = false;
  std::string out;
  std::vector<std::string> checkpoints;
  std::vector<std::string> args;  // everything after the program name
};

// Runs one subcommand. Errors propagate as ValidationError/NumericalError.
void execute(const Invocation& inv);

const std::vector<std::string>& command_names();

}  // namespace pm::cli
