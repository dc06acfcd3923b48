#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "slidestream/chat_backend.hpp"
#include "slidestream/slide_repository.hpp"

namespace slidestream {

inline constexpr std::int64_t kDefaultRegionLimitPx = 16'000'000;

struct AssistantSettings {
  std::string backend = "echo";  // echo | stub | http
  assistant::BackendConfig http;
  std::filesystem::path stub_fixture;
  std::size_t max_context_turns = 8;
};

struct ServerConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;  // 0 binds an ephemeral port
  std::filesystem::path store_root = "store";
  CacheConfig cache;
  std::int64_t region_limit_px = kDefaultRegionLimitPx;
  unsigned prefetch_workers = 2;
  std::size_t prefetch_queue = 4096;
  unsigned http_threads = 8;
  bool cbir_auto_refresh = false;
  std::optional<std::filesystem::path> ui_root;
  AssistantSettings assistant;
};

/// Reads a JSON config file. Unknown keys and ill-typed values are
/// Errc::config naming the key.
ServerConfig load_config_file(const std::filesystem::path& path);

/// Same, from JSON text (used by tests).
ServerConfig parse_config(const std::string& json_text, const ServerConfig& base = {});

using EnvLookup = std::function<const char*(const char*)>;

/// Applies SLIDESTREAM_LISTEN (host:port), SLIDESTREAM_STORE,
/// SLIDESTREAM_TILE_CACHE_BYTES, SLIDESTREAM_SLIDE_CACHE_ENTRIES and
/// SLIDESTREAM_REGION_LIMIT_PX.
void apply_env_overrides(ServerConfig& cfg, const EnvLookup& env);

/// Builds the configured backend. A live backend reads its credential here,
/// so a missing key fails at startup.
std::shared_ptr<assistant::ChatBackend> make_backend(const AssistantSettings& settings);

}  // namespace slidestream
