#pragma once

#include <string_view>

namespace infocons {

enum class LogLevel { quiet, warn, info };

void set_log_level(LogLevel level);
LogLevel log_level();

void log_warn(std::string_view msg);
void log_info(std::string_view msg);

}  // namespace infocons
