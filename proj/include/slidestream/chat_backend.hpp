#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "slidestream/error.hpp"

namespace slidestream::assistant {

/// Backend answered with a non-success HTTP status.
class UpstreamError : public Error {
 public:
  UpstreamError(int status, const std::string& message)
      : Error(Errc::upstream, message), status_(status) {}
  int upstream_status() const noexcept { return status_; }

 private:
  int status_;
};

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

/// Ordered messages sent to a chat-completion backend.
struct PromptDocument {
  std::vector<ChatMessage> messages;

  /// Canonical JSON array of {role, content}; byte-stable for equal documents.
  std::string to_json() const;

  friend bool operator==(const PromptDocument&, const PromptDocument&) = default;
};

/// API secret loaded from the environment. Never formatted, logged or
/// serialised; only the HTTP backend reads it to build a header.
class Credential {
 public:
  /// Errc::config when the variable is unset or empty.
  static Credential from_env(const std::string& variable);

  const std::string& reveal() const { return value_; }

 private:
  explicit Credential(std::string value) : value_(std::move(value)) {}
  std::string value_;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string_view name() const = 0;

  /// Completion text for `prompt`. Errc::timeout when the backend cannot be
  /// reached in time, Errc::upstream for an error status.
  virtual std::string complete(const PromptDocument& prompt) = 0;
};

/// Deterministic mock: "echo[<first 12 hex of sha256(preamble)>]: <last user text>".
class EchoBackend final : public ChatBackend {
 public:
  std::string_view name() const override { return "echo"; }
  std::string complete(const PromptDocument& prompt) override;
};

/// Replays recorded chat-completion response bodies in order, repeating the
/// last one once exhausted. Fixture: {"responses": [<response body>, ...]}.
class RecordedStubBackend final : public ChatBackend {
 public:
  explicit RecordedStubBackend(const std::filesystem::path& fixture);
  explicit RecordedStubBackend(std::vector<std::string> response_bodies);

  std::string_view name() const override { return "stub"; }
  std::string complete(const PromptDocument& prompt) override;

  /// Prompts received so far.
  std::vector<PromptDocument> received() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> bodies_;
  std::size_t next_ = 0;
  std::vector<PromptDocument> received_;
};

struct BackendConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  std::chrono::milliseconds timeout{30000};
  std::string api_key_env = "SLIDESTREAM_API_KEY";
};

/// OpenAI-compatible chat-completion client over HTTP(S).
class HttpChatBackend final : public ChatBackend {
 public:
  /// Reads the credential now so a missing key fails at startup.
  explicit HttpChatBackend(BackendConfig cfg);

  std::string_view name() const override { return "http"; }
  std::string complete(const PromptDocument& prompt) override;

 private:
  BackendConfig cfg_;
  Credential credential_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Request body of the chat-completion wire shape.
std::string chat_request_body(const std::string& model, const PromptDocument& prompt);

/// choices[0].message.content of a chat-completion response body.
/// Errc::upstream when the body has no such field.
std::string parse_completion_text(std::string_view body);

}  // namespace slidestream::assistant
