#pragma once

#include <sstream>
#include <string>

namespace advo::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

void set_level(Level level);
Level level();

void write(Level level, const std::string& message);

// Counts every warning seen since start-up; tests use it to check that a
// warning-level report happened without scraping stderr.
std::size_t warning_count();

template <typename... Args>
void info(const Args&... args) {
  if (level() > Level::Info) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::Info, os.str());
}

template <typename... Args>
void warn(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  write(Level::Warn, os.str());
}

}  // namespace advo::log
