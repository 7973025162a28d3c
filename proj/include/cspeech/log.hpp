#pragma once

#include <string_view>

namespace cspeech {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Messages above the threshold are dropped. The initial threshold comes from
/// CSPEECH_LOG_LEVEL (error|warn|info|debug), default warn.
void set_log_level(LogLevel level);
LogLevel log_level();
/// Writes one line to stderr; safe to call from several threads.
void log_message(LogLevel level, std::string_view message);

inline void log_warn(std::string_view m) { log_message(LogLevel::warn, m); }
inline void log_info(std::string_view m) { log_message(LogLevel::info, m); }

}  // namespace cspeech
