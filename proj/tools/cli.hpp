#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lpe::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

// Runs one `lpe` invocation. args excludes the program name. The JSON report goes to `out`,
// the human-readable summary and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lpe::cli
