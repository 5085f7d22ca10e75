#include "koa/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace koa::log {

namespace {
std::atomic<Level> g_level{Level::Warning};
std::mutex g_mutex;
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void write(Level level, std::string_view message) {
  if (level < g_level.load()) return;
  static constexpr const char* names[] = {"debug", "info", "warning", "error"};
  std::lock_guard lock(g_mutex);
  std::fprintf(stderr, "[%s] %.*s\n", names[static_cast<int>(level)], static_cast<int>(message.size()), message.data());
}

}  // namespace koa::log
