#pragma once

#include <string>

namespace afcurve {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Level comes from AFCURVE_LOG in {error, info, debug} (default error) the
// first time it is queried; set_log_level overrides it.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace afcurve
