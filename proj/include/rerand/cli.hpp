#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rerand {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

struct CommandOutcome {
  int exit_code = kExitOk;
  std::vector<std::string> files;
};

// `args` excludes the program name. Results go to `out`; one JSON log record
// per run goes to `log`.
CommandOutcome run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

// Edit distance, used for flag suggestions.
std::size_t levenshtein(const std::string& a, const std::string& b);

std::string version_string();

}  // namespace rerand
