#include "cspeech/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace cspeech {

namespace {

LogLevel initial_level() {
  const char* v = std::getenv("CSPEECH_LOG_LEVEL");
  const std::string s = v ? v : "";
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  return LogLevel::warn;
}

std::atomic<LogLevel>& threshold() {
  static std::atomic<LogLevel> level{initial_level()};
  return level;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

constexpr const char* kNames[] = {"error", "warn", "info", "debug"};

}  // namespace

void set_log_level(LogLevel level) { threshold() = level; }
LogLevel log_level() { return threshold(); }

void log_message(LogLevel level, std::string_view message) {
  if (level > threshold()) return;
  std::lock_guard lock(sink_mutex());
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace cspeech
