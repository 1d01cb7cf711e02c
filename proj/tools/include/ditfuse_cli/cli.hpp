#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ditfuse/error.hpp"

namespace ditfuse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

/// Exit status for a library error: 2 config/parse, 3 I/O, 4 numeric.
int exit_code_for(ErrorCode code);

/// Runs the `ditfuse` command line. argv[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ditfuse::cli
