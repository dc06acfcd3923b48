#include "slidestream/assistant.hpp"

#include <random>

#include <fmt/format.h>

#include "slidestream/error.hpp"
#include "slidestream/logging.hpp"

namespace slidestream::assistant {

const std::string_view kSystemPreamble =
    "You are a pathology workflow co-pilot for information retrieval embedded in a whole-slide "
    "image viewer. You provide decision support, not primary diagnosis. Answer questions about "
    "visual features, scoring protocols and differential diagnoses concisely, say when you are "
    "uncertain, and defer final interpretation to the pathologist.";

const std::string_view kAdvisoryFooter =
    "Advisory: decision support only, not for primary diagnosis. Verify against the slide and "
    "institutional guidelines.";

namespace {

std::string format_length(double microns) {
  if (microns >= 1000.0) return fmt::format("{:.1f} mm", microns / 1000.0);
  return fmt::format("{:.0f} µm", microns);
}

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  return fmt::format("{:016x}", rng());
}

}  // namespace

std::string format_field_of_view(const PhysicalExtent& extent) {
  return fmt::format("field of view ≈ {} × {}", format_length(extent.width_um),
                     format_length(extent.height_um));
}

PromptDocument build_context(const ChatSession& session, const std::optional<Viewport>& viewport,
                             std::size_t max_context_turns) {
  PromptDocument doc;
  doc.messages.push_back({"system", std::string(kSystemPreamble)});
  if (session.slide) {
    const SlideMetadata& m = *session.slide;
    const std::string mpp =
        m.mpp ? fmt::format("{} µm per pixel", *m.mpp) : "microns per pixel unknown";
    doc.messages.push_back(
        {"system", fmt::format("Slide '{}': {} x {} px at full resolution, {}, {} pyramid levels, "
                               "tile size {} px.",
                               m.slide_id, m.width_px, m.height_px, mpp, m.max_level + 1,
                               m.tile_size)});
    if (viewport) {
      const Viewport vp = clamp_to_level(m, *viewport);
      std::string text = fmt::format(
          "Current viewport: level {} of {} (downsample {}x), x={} y={} width={} height={} px in "
          "level coordinates",
          vp.level, m.max_level, level_spec(m, vp.level).downsample, vp.x, vp.y, vp.width,
          vp.height);
      if (m.mpp) text += "; " + format_field_of_view(viewport_physical_extent(m, vp));
      doc.messages.push_back({"system", text + "."});
    }
  } else if (viewport) {
    throw Error(Errc::validation, "a viewport needs a session bound to a slide");
  }
  std::vector<const ChatTurn*> completed;
  for (const auto& t : session.turns) {
    if (t.status == TurnStatus::completed) completed.push_back(&t);
  }
  const std::size_t first = completed.size() > max_context_turns ? completed.size() - max_context_turns : 0;
  for (std::size_t i = first; i < completed.size(); ++i) {
    doc.messages.push_back({"user", completed[i]->user_text});
    doc.messages.push_back({"assistant", completed[i]->backend_text});
  }
  return doc;
}

Assistant::Assistant(SlideRepository& repo, std::shared_ptr<ChatBackend> backend, AssistantConfig cfg)
    : repo_(repo), backend_(std::move(backend)), cfg_(cfg) {
  if (!backend_) throw Error(Errc::config, "assistant needs a backend");
}

std::string Assistant::create_session(const std::optional<std::string>& slide_id) {
  auto slot = std::make_shared<Slot>();
  if (slide_id) slot->session.slide = repo_.open_slide(*slide_id)->meta;
  slot->session.created_at = std::chrono::system_clock::now();
  std::unique_lock lock(sessions_mutex_);
  std::string id;
  do {
    id = new_session_id();
  } while (sessions_.count(id));
  slot->session.session_id = id;
  sessions_.emplace(id, std::move(slot));
  return id;
}

std::shared_ptr<Assistant::Slot> Assistant::slot(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    throw Error(Errc::session_not_found, fmt::format("session '{}' not found", session_id));
  }
  return it->second;
}

ChatSession Assistant::session(const std::string& session_id) const {
  const auto s = slot(session_id);
  std::lock_guard lock(s->data_mutex);
  return s->session;
}

PromptDocument Assistant::context_for(const std::string& session_id,
                                      const std::optional<Viewport>& viewport) const {
  return build_context(session(session_id), viewport, cfg_.max_context_turns);
}

ChatTurn Assistant::ask(const std::string& session_id, const std::string& user_text,
                        const std::optional<Viewport>& viewport) {
  if (user_text.empty()) throw Error(Errc::validation, "question text must not be empty");
  const auto s = slot(session_id);
  std::lock_guard serial(s->ask_mutex);

  ChatSession snapshot;
  {
    std::lock_guard lock(s->data_mutex);
    snapshot = s->session;
  }
  PromptDocument prompt = build_context(snapshot, viewport, cfg_.max_context_turns);
  prompt.messages.push_back({"user", user_text});

  ChatTurn turn;
  turn.user_text = user_text;
  if (viewport && snapshot.slide) {
    const Viewport vp = clamp_to_level(*snapshot.slide, *viewport);
    ViewportContext ctx{snapshot.slide->slide_id, vp, std::nullopt};
    if (snapshot.slide->mpp) ctx.extent = viewport_physical_extent(*snapshot.slide, vp);
    turn.viewport_context = ctx;
  }

  const auto started = std::chrono::steady_clock::now();
  in_flight_.acquire();
  try {
    turn.backend_text = backend_->complete(prompt);
    in_flight_.release();
  } catch (const Error& e) {
    in_flight_.release();
    turn.backend_latency = std::chrono::steady_clock::now() - started;
    turn.status = TurnStatus::failed;
    turn.error_code = std::string(code_name(e.code()));
    {
      std::lock_guard lock(s->data_mutex);
      s->session.turns.push_back(turn);
    }
    log()->warn("assistant backend '{}' failed for session {}: {}", backend_->name(), session_id,
                code_name(e.code()));
    throw;
  } catch (...) {
    in_flight_.release();
    throw;
  }
  turn.backend_latency = std::chrono::steady_clock::now() - started;
  turn.assistant_text = turn.backend_text + "\n\n" + std::string(kAdvisoryFooter);
  {
    std::lock_guard lock(s->data_mutex);
    s->session.turns.push_back(turn);
  }
  log()->info("assistant session {} turn {} answered by '{}' in {:.1f} ms", session_id,
              snapshot.turns.size() + 1, backend_->name(), turn.backend_latency.count());
  return turn;
}

}  // namespace slidestream::assistant
