#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace bnasr::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kSilent = 4 };

namespace detail {
inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::kInfo};
  return level;
}
inline std::atomic<long>& warn_count() {
  static std::atomic<long> count{0};
  return count;
}
inline std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}
inline void emit(Level level, const char* tag, const std::string& msg) {
  if (level == Level::kWarn) ++warn_count();
  if (level < threshold().load()) return;
  std::lock_guard<std::mutex> lock(sink_mutex());
  std::clog << tag << msg << '\n';
}
template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

inline void set_level(Level level) { detail::threshold() = level; }
inline Level level() { return detail::threshold(); }
/// Number of warnings issued so far, including suppressed ones.
inline long warnings() { return detail::warn_count(); }

template <typename... Args>
void debug(const Args&... args) { detail::emit(Level::kDebug, "[debug] ", detail::concat(args...)); }
template <typename... Args>
void info(const Args&... args) { detail::emit(Level::kInfo, "[info] ", detail::concat(args...)); }
template <typename... Args>
void warn(const Args&... args) { detail::emit(Level::kWarn, "[warn] ", detail::concat(args...)); }
template <typename... Args>
void error(const Args&... args) { detail::emit(Level::kError, "[error] ", detail::concat(args...)); }

}  // namespace bnasr::log
