#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace see {

// Exit statuses of the command-line tool.
enum ExitStatus : int {
  kExitOk = 0,
  kExitUsage = 1,       // bad flags, configuration or shapes
  kExitData = 2,        // unreadable, unwritable or malformed files
  kExitIncomplete = 3,  // sweep stopped at its model budget; rerun to resume
  kExitNoFeasible = 4,  // no sweep configuration met the accuracy floor
  kExitTraining = 5,
};

// Runs the `see` tool on argv-style arguments (args[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace see
