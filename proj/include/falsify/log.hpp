#pragma once

#include <spdlog/logger.h>

#include <memory>

namespace falsify {

/// Process-wide logger writing to stderr; stdout is reserved for machine output.
spdlog::logger& log();

}  // namespace falsify
