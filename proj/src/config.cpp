#include "slidestream/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "slidestream/error.hpp"

namespace slidestream {

using nlohmann::json;

namespace {

template <class T>
T get_as(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::config, fmt::format("config key '{}' has the wrong type", key));
  }
}

void apply_assistant(AssistantSettings& a, const json& obj) {
  if (!obj.is_object()) throw Error(Errc::config, "config key 'assistant' must be an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = "assistant." + key;
    if (key == "backend") {
      a.backend = get_as<std::string>(value, path);
      if (a.backend != "echo" && a.backend != "stub" && a.backend != "http") {
        throw Error(Errc::config, fmt::format("config key '{}' must be echo, stub or http", path));
      }
    } else if (key == "endpoint") {
      a.http.endpoint = get_as<std::string>(value, path);
    } else if (key == "model") {
      a.http.model = get_as<std::string>(value, path);
    } else if (key == "timeout_ms") {
      a.http.timeout = std::chrono::milliseconds(get_as<std::int64_t>(value, path));
    } else if (key == "api_key_env") {
      a.http.api_key_env = get_as<std::string>(value, path);
    } else if (key == "stub_fixture") {
      a.stub_fixture = get_as<std::string>(value, path);
    } else if (key == "max_context_turns") {
      a.max_context_turns = get_as<std::size_t>(value, path);
    } else {
      throw Error(Errc::config, fmt::format("unknown config key '{}'", path));
    }
  }
}

template <class T>
T parse_env_number(const char* name, const char* text) {
  T value{};
  const std::string_view s(text);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(Errc::config, fmt::format("environment variable {} is not a number", name));
  }
  return value;
}

}  // namespace

ServerConfig parse_config(const std::string& json_text, const ServerConfig& base) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(Errc::config, fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw Error(Errc::config, "config must be a JSON object");
  ServerConfig cfg = base;
  for (const auto& [key, value] : doc.items()) {
    if (key == "listen_host") {
      cfg.listen_host = get_as<std::string>(value, key);
    } else if (key == "listen_port") {
      cfg.listen_port = get_as<int>(value, key);
    } else if (key == "store_root") {
      cfg.store_root = get_as<std::string>(value, key);
    } else if (key == "tile_cache_bytes") {
      cfg.cache.tile_cache_capacity_bytes = get_as<std::size_t>(value, key);
    } else if (key == "slide_cache_entries") {
      cfg.cache.slide_cache_capacity_entries = get_as<std::size_t>(value, key);
    } else if (key == "region_limit_px") {
      cfg.region_limit_px = get_as<std::int64_t>(value, key);
    } else if (key == "prefetch_workers") {
      cfg.prefetch_workers = get_as<unsigned>(value, key);
    } else if (key == "prefetch_queue") {
      cfg.prefetch_queue = get_as<std::size_t>(value, key);
    } else if (key == "http_threads") {
      cfg.http_threads = get_as<unsigned>(value, key);
    } else if (key == "cbir_auto_refresh") {
      cfg.cbir_auto_refresh = get_as<bool>(value, key);
    } else if (key == "ui_root") {
      cfg.ui_root = get_as<std::string>(value, key);
    } else if (key == "assistant") {
      apply_assistant(cfg.assistant, value);
    } else {
      throw Error(Errc::config, fmt::format("unknown config key '{}'", key));
    }
  }
  if (cfg.listen_port < 0 || cfg.listen_port > 65535) {
    throw Error(Errc::config, "config key 'listen_port' must be in [0, 65535]");
  }
  if (cfg.region_limit_px <= 0) throw Error(Errc::config, "config key 'region_limit_px' must be positive");
  validate_cache_config(cfg.cache);
  return cfg;
}

ServerConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, fmt::format("cannot read config file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_env_overrides(ServerConfig& cfg, const EnvLookup& env) {
  if (const char* v = env("SLIDESTREAM_LISTEN")) {
    const std::string s(v);
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) {
      throw Error(Errc::config, "SLIDESTREAM_LISTEN must be host:port");
    }
    cfg.listen_host = s.substr(0, colon);
    cfg.listen_port = parse_env_number<int>("SLIDESTREAM_LISTEN", s.c_str() + colon + 1);
  }
  if (const char* v = env("SLIDESTREAM_STORE")) cfg.store_root = v;
  if (const char* v = env("SLIDESTREAM_TILE_CACHE_BYTES")) {
    cfg.cache.tile_cache_capacity_bytes = parse_env_number<std::size_t>("SLIDESTREAM_TILE_CACHE_BYTES", v);
  }
  if (const char* v = env("SLIDESTREAM_SLIDE_CACHE_ENTRIES")) {
    cfg.cache.slide_cache_capacity_entries =
        parse_env_number<std::size_t>("SLIDESTREAM_SLIDE_CACHE_ENTRIES", v);
  }
  if (const char* v = env("SLIDESTREAM_REGION_LIMIT_PX")) {
    cfg.region_limit_px = parse_env_number<std::int64_t>("SLIDESTREAM_REGION_LIMIT_PX", v);
  }
  validate_cache_config(cfg.cache);
}

std::shared_ptr<assistant::ChatBackend> make_backend(const AssistantSettings& settings) {
  if (settings.backend == "echo") return std::make_shared<assistant::EchoBackend>();
  if (settings.backend == "stub") {
    return std::make_shared<assistant::RecordedStubBackend>(settings.stub_fixture);
  }
  if (settings.backend == "http") return std::make_shared<assistant::HttpChatBackend>(settings.http);
  throw Error(Errc::config, fmt::format("unknown assistant backend '{}'", settings.backend));
}

}  // namespace slidestream
