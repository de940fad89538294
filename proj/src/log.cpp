#include "anyshot/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace anyshot::log {
namespace {

Level level_from_env() {
  const char* env = std::getenv("ANYSHOT_LOG");
  if (env == nullptr) return Level::kInfo;
  const std::string value(env);
  if (value == "debug") return Level::kDebug;
  if (value == "warn") return Level::kWarn;
  if (value == "error") return Level::kError;
  if (value == "off") return Level::kOff;
  return Level::kInfo;
}

std::atomic<Level>& threshold() {
  static std::atomic<Level> value{level_from_env()};
  return value;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

void emit(Level lvl, const char* tag, std::string_view message) {
  if (lvl < threshold().load()) return;
  std::lock_guard<std::mutex> lock(sink_mutex());
  std::cerr << '[' << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level lvl) { threshold().store(lvl); }
Level level() { return threshold().load(); }

void debug(std::string_view message) { emit(Level::kDebug, "debug", message); }
void info(std::string_view message) { emit(Level::kInfo, "info", message); }
void warn(std::string_view message) { emit(Level::kWarn, "warn", message); }
void error(std::string_view message) { emit(Level::kError, "error", message); }

}  // namespace anyshot::log
