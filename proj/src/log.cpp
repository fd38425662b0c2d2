#include "dklgp/log.hpp"

#include <atomic>
#include <iostream>

namespace dkl {

namespace {
std::atomic<LogLevel> g_level{LogLevel::Warning};
}

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warning(const std::string &message) {
  if (g_level >= LogLevel::Warning)
    std::clog << "[dklgp] warning: " << message << '\n';
}

void log_info(const std::string &message) {
  if (g_level >= LogLevel::Info)
    std::clog << "[dklgp] " << message << '\n';
}

} // namespace dkl
