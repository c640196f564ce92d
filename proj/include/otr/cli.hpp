#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace otr {

inline constexpr int kReportSchemaVersion = 1;

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitDataError = 2,  // bad input data, config or flags
  kExitNumericalError = 3,
  kExitReportError = 4,  // report could not be written or failed validation
};

// Structural check of a run report; returns the problems found (empty when
// the report is valid).
std::vector<std::string> validate_report(const nlohmann::json& report);

// Entry point of the `otr` tool. Reports go to --out (atomically) or `out`;
// errors are written to `err` as a JSON object.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace otr
