#pragma once

#include <cstdio>
#include <string>

namespace camnet::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline Level& level() {
  static Level lvl = Level::Info;
  return lvl;
}

inline void set_level(Level lvl) { level() = lvl; }

inline bool set_level(const std::string& name) {
  if (name == "debug") level() = Level::Debug;
  else if (name == "info") level() = Level::Info;
  else if (name == "warn") level() = Level::Warn;
  else if (name == "error") level() = Level::Error;
  else if (name == "off") level() = Level::Off;
  else return false;
  return true;
}

inline void emit(Level lvl, const char* tag, const std::string& msg) {
  if (lvl < level()) return;
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void debug(const std::string& msg) { emit(Level::Debug, "debug", msg); }
inline void info(const std::string& msg) { emit(Level::Info, "info", msg); }
inline void warn(const std::string& msg) { emit(Level::Warn, "warn", msg); }
inline void error(const std::string& msg) { emit(Level::Error, "error", msg); }

}  // namespace camnet::log
