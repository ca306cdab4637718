#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace itb {

// Exit codes of the itb tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,          // any other library error
  kExitConfig = 2,           // bad flags or config file
  kExitGeneration = 3,       // attractor integration or corruption failed
  kExitShape = 4,            // shape/manifest mismatch, unsupported method, empty report
  kExitExternalScorer = 5,   // external scorer protocol or process failure
};

// Runs one subcommand (gen, train, attribute, evaluate, report). args[0] is
// the program name. Never throws; errors are written to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace itb
