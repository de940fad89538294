#pragma once

#include <string_view>

namespace anyshot::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

// Messages below the threshold are dropped. Default: kInfo, or the value of
// ANYSHOT_LOG (debug|info|warn|error|off) when set.
void set_level(Level level);
Level level();

void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace anyshot::log
