#include "afcurve/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace afcurve {

namespace {

LogLevel level_from_env() {
  const char* env = std::getenv("AFCURVE_LOG");
  if (!env) return LogLevel::kError;
  if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
  if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
  return LogLevel::kError;
}

std::atomic<int>& level_store() {
  static std::atomic<int> level{int(level_from_env())};
  return level;
}

void emit(const char* tag, const std::string& msg) {
  std::fprintf(stderr, "[afcurve:%s] %s\n", tag, msg.c_str());
}

}  // namespace

LogLevel log_level() { return LogLevel(level_store().load(std::memory_order_relaxed)); }

void set_log_level(LogLevel level) {
  level_store().store(int(level), std::memory_order_relaxed);
}

void log_error(const std::string& msg) { emit("error", msg); }

void log_info(const std::string& msg) {
  if (int(log_level()) >= int(LogLevel::kInfo)) emit("info", msg);
}

void log_debug(const std::string& msg) {
  if (int(log_level()) >= int(LogLevel::kDebug)) emit("debug", msg);
}

}  // namespace afcurve
