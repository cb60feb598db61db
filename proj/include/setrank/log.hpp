#pragma once

// Leveled logging to stderr. The threshold comes from RANK_LOG
// (debug, info, warn); the default is info.

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace setrank {

enum class LogLevel { debug = 0, info = 1, warn = 2 };

inline LogLevel parse_log_level(std::string_view text, LogLevel fallback = LogLevel::info) {
  if (text == "debug") return LogLevel::debug;
  if (text == "info") return LogLevel::info;
  if (text == "warn") return LogLevel::warn;
  return fallback;
}

inline LogLevel& log_threshold() {
  static LogLevel level = [] {
    const char* env = std::getenv("RANK_LOG");
    return env ? parse_log_level(env) : LogLevel::info;
  }();
  return level;
}

inline void log(LogLevel level, const std::string& message) {
  if (level < log_threshold()) return;
  static const char* names[] = {"debug", "info", "warn"};
  std::cerr << '[' << names[static_cast<int>(level)] << "] " << message << '\n';
}

inline void log_debug(const std::string& m) { log(LogLevel::debug, m); }
inline void log_info(const std::string& m) { log(LogLevel::info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::warn, m); }

}  // namespace setrank
