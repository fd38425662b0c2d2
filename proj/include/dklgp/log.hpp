#pragma once

#include <string>

namespace dkl {

enum class LogLevel { Quiet = 0, Warning = 1, Info = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_warning(const std::string &message);
void log_info(const std::string &message);

} // namespace dkl
