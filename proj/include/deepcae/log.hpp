#pragma once

#include <string_view>

namespace deepcae::log {

enum class Level { quiet, warn, info };

void set_level(Level level);
Level level();

/// Progress and diagnostics go to stderr; results only ever go to files.
void info(std::string_view message);
void warn(std::string_view message);

}  // namespace deepcae::log
