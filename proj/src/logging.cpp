#include "slidestream/logging.hpp"

#include <mutex>

#include <spdlog/sinks/stdout_sinks.h>

namespace slidestream {

namespace {

std::shared_ptr<spdlog::logger>& logger_slot() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = std::make_shared<spdlog::logger>(
        "slidestream", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");
    l->set_level(spdlog::level::info);
    return l;
  }();
  return logger;
}

std::mutex& logger_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::shared_ptr<spdlog::logger> log() {
  std::lock_guard lock(logger_mutex());
  return logger_slot();
}

void set_log_sinks(std::vector<spdlog::sink_ptr> sinks) {
  std::lock_guard lock(logger_mutex());
  auto next = std::make_shared<spdlog::logger>("slidestream", sinks.begin(), sinks.end());
  next->set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");
  next->set_level(logger_slot()->level());
  next->flush_on(spdlog::level::info);
  logger_slot() = std::move(next);
}

}  // namespace slidestream
