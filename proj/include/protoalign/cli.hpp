#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace protoalign {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

/// Runs one command line (`args[0]` is the program name). Returns the
/// process exit status: 0 success, 2 usage, 3 data/format, 4 numeric.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protoalign
