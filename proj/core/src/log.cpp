#include "infocons/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace infocons {
namespace {
std::atomic<LogLevel> g_level{LogLevel::warn};
std::mutex g_mu;
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warn(std::string_view msg) {
  if (g_level == LogLevel::quiet) return;
  std::lock_guard lock(g_mu);
  std::clog << "warning: " << msg << '\n';
}

void log_info(std::string_view msg) {
  if (g_level != LogLevel::info) return;
  std::lock_guard lock(g_mu);
  std::clog << msg << '\n';
}

}  // namespace infocons
