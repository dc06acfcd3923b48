#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <vector>

#include "slidestream/chat_backend.hpp"
#include "slidestream/pyramid.hpp"
#include "slidestream/slide_repository.hpp"

namespace slidestream::assistant {

/// First system message of every prompt.
extern const std::string_view kSystemPreamble;

/// Appended to every delivered reply.
extern const std::string_view kAdvisoryFooter;

struct ViewportContext {
  std::string slide_id;
  Viewport viewport;
  std::optional<PhysicalExtent> extent;
};

enum class TurnStatus { completed, failed };

struct ChatTurn {
  std::string user_text;
  std::optional<ViewportContext> viewport_context;
  std::string backend_text;    // verbatim backend completion
  std::string assistant_text;  // backend_text + advisory footer
  std::chrono::duration<double, std::milli> backend_latency{};
  TurnStatus status = TurnStatus::completed;
  std::string error_code;  // set on failed turns
};

struct ChatSession {
  std::string session_id;
  std::optional<SlideMetadata> slide;
  std::vector<ChatTurn> turns;
  std::chrono::system_clock::time_point created_at;
};

struct AssistantConfig {
  std::size_t max_context_turns = 8;
};

/// "field of view ≈ 5.0 mm × 4.0 mm" style rendering of a physical extent.
std::string format_field_of_view(const PhysicalExtent& extent);

/// Deterministic prompt for `session`: preamble, slide metadata, viewport
/// (with physical extent when calibrated), and the last
/// `max_context_turns` completed turns.
PromptDocument build_context(const ChatSession& session, const std::optional<Viewport>& viewport,
                             std::size_t max_context_turns);

/// Chat sessions over a pluggable backend. Asks on one session are
/// serialised; distinct sessions run in parallel, bounded globally by the
/// in-flight limit.
class Assistant {
 public:
  static constexpr std::ptrdiff_t kMaxInFlight = 4;

  Assistant(SlideRepository& repo, std::shared_ptr<ChatBackend> backend, AssistantConfig cfg = {});

  /// Errc::slide_not_found for an unknown slide.
  std::string create_session(const std::optional<std::string>& slide_id = std::nullopt);

  /// Snapshot; Errc::session_not_found for unknown ids.
  ChatSession session(const std::string& session_id) const;

  PromptDocument context_for(const std::string& session_id,
                             const std::optional<Viewport>& viewport) const;

  /// Sends context + `user_text` and appends the turn. Backend failures
  /// record a failed turn and rethrow.
  ChatTurn ask(const std::string& session_id, const std::string& user_text,
               const std::optional<Viewport>& viewport = std::nullopt);

  const ChatBackend& backend() const { return *backend_; }

 private:
  struct Slot {
    mutable std::mutex ask_mutex;   // serialises asks
    mutable std::mutex data_mutex;  // guards `session`
    ChatSession session;
  };

  std::shared_ptr<Slot> slot(const std::string& session_id) const;

  SlideRepository& repo_;
  std::shared_ptr<ChatBackend> backend_;
  AssistantConfig cfg_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::counting_semaphore<kMaxInFlight> in_flight_{kMaxInFlight};
};

}  // namespace slidestream::assistant
