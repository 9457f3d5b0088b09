#pragma once

#include <string>

#include <fmt/core.h>

namespace asmmd {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Active level, parsed once from the ASMMD_LOG environment variable
/// ("error", "info" or "debug"; default "info").
LogLevel log_level();

bool log_enabled(LogLevel level);

void log_line(LogLevel level, const std::string& message);

template <typename... Args>
void log_error(fmt::format_string<Args...> f, Args&&... args) {
  if (log_enabled(LogLevel::error))
    log_line(LogLevel::error, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void log_info(fmt::format_string<Args...> f, Args&&... args) {
  if (log_enabled(LogLevel::info))
    log_line(LogLevel::info, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void log_debug(fmt::format_string<Args...> f, Args&&... args) {
  if (log_enabled(LogLevel::debug))
    log_line(LogLevel::debug, fmt::format(f, std::forward<Args>(args)...));
}

}  // namespace asmmd
