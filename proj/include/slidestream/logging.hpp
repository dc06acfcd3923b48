#pragma once

#include <memory>

#include <spdlog/logger.h>

namespace slidestream {

/// Process-wide logger. Defaults to stderr; tests and the server swap sinks.
std::shared_ptr<spdlog::logger> log();

/// Replaces the sinks of the process-wide logger.
void set_log_sinks(std::vector<spdlog::sink_ptr> sinks);

}  // namespace slidestream
