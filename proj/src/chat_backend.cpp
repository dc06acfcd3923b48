#include "slidestream/chat_backend.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "slidestream/error.hpp"
#include "slidestream/store.hpp"

namespace slidestream::assistant {

using nlohmann::json;

std::string PromptDocument::to_json() const {
  json arr = json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr.dump();
}

Credential Credential::from_env(const std::string& variable) {
  const char* value = std::getenv(variable.c_str());
  if (!value || !*value) {
    throw Error(Errc::config,
                fmt::format("assistant backend credential variable {} is not set", variable));
  }
  return Credential(value);
}

std::string EchoBackend::complete(const PromptDocument& prompt) {
  std::string preamble;
  std::string user;
  for (const auto& m : prompt.messages) {
    if (m.role == "system" && preamble.empty()) preamble = m.content;
    if (m.role == "user") user = m.content;
  }
  return fmt::format("echo[{}]: {}", sha256_hex(preamble).substr(0, 12), user);
}

RecordedStubBackend::RecordedStubBackend(const std::filesystem::path& fixture) {
  std::ifstream in(fixture);
  if (!in) throw Error(Errc::config, fmt::format("cannot read stub fixture '{}'", fixture.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::config, fmt::format("stub fixture '{}' is not JSON: {}", fixture.string(), e.what()));
  }
  if (!doc.contains("responses") || !doc["responses"].is_array() || doc["responses"].empty()) {
    throw Error(Errc::config,
                fmt::format("stub fixture '{}' needs a non-empty 'responses' array", fixture.string()));
  }
  for (const auto& r : doc["responses"]) bodies_.push_back(r.is_string() ? r.get<std::string>() : r.dump());
}

RecordedStubBackend::RecordedStubBackend(std::vector<std::string> response_bodies)
    : bodies_(std::move(response_bodies)) {
  if (bodies_.empty()) throw Error(Errc::config, "stub backend needs at least one response");
}

std::string RecordedStubBackend::complete(const PromptDocument& prompt) {
  std::lock_guard lock(mutex_);
  received_.push_back(prompt);
  const std::string& body = bodies_[std::min(next_, bodies_.size() - 1)];
  ++next_;
  return parse_completion_text(body);
}

std::vector<PromptDocument> RecordedStubBackend::received() const {
  std::lock_guard lock(mutex_);
  return received_;
}

std::string chat_request_body(const std::string& model, const PromptDocument& prompt) {
  json body;
  body["model"] = model;
  body["messages"] = json::parse(prompt.to_json());
  return body.dump();
}

std::string parse_completion_text(std::string_view body) {
  try {
    const json doc = json::parse(body);
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw Error(Errc::upstream, "backend response has no choices[0].message.content");
  }
}

HttpChatBackend::HttpChatBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), credential_(Credential::from_env(cfg_.api_key_env)) {
  if (cfg_.timeout.count() <= 0) throw Error(Errc::config, "assistant timeout must be positive");
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url)) {
    throw Error(Errc::config, fmt::format("assistant endpoint '{}' is not an http(s) URL", cfg_.endpoint));
  }
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

std::string HttpChatBackend::complete(const PromptDocument& prompt) {
  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  const httplib::Headers headers{{"Authorization", "Bearer " + credential_.reveal()}};
  auto res = client.Post(path_, headers, chat_request_body(cfg_.model, prompt), "application/json");
  if (!res) {
    throw Error(Errc::timeout, fmt::format("assistant backend did not answer within {} ms ({})",
                                           cfg_.timeout.count(), httplib::to_string(res.error())));
  }
  if (res->status < 200 || res->status >= 300) {
    throw UpstreamError(res->status,
                        fmt::format("assistant backend returned status {}", res->status));
  }
  return parse_completion_text(res->body);
}

}  // namespace slidestream::assistant
