#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cabin {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Entry point of the `cabin` tool. Diagnostics go to `err`, progress to `out`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cabin
