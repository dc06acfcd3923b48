#include "slidestream/tile_service.hpp"

#include <sys/resource.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <charconv>
#include <chrono>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "slidestream/error.hpp"
#include "slidestream/logging.hpp"

namespace slidestream {

using nlohmann::json;

// ---------------------------------------------------------------------------
// PrefetchPool

PrefetchPool::PrefetchPool(SlideRepository& repo, unsigned workers, std::size_t max_queue)
    : repo_(repo), max_queue_(max_queue) {
  for (unsigned i = 0; i < workers; ++i) workers_.emplace_back([this] { run(); });
}

PrefetchPool::~PrefetchPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
    queue_.clear();
  }
  work_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

std::size_t PrefetchPool::schedule(const std::vector<TileAddress>& tiles) {
  if (workers_.empty()) return 0;
  std::size_t accepted = 0;
  {
    std::lock_guard lock(mutex_);
    for (const auto& t : tiles) {
      if (queue_.size() >= max_queue_) break;
      queue_.push_back(t);
      ++accepted;
    }
  }
  work_cv_.notify_all();
  return accepted;
}

void PrefetchPool::drain() {
  std::unique_lock lock(mutex_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && busy_ == 0; });
}

void PrefetchPool::run() {
  // Per-thread nice value; foreground handlers keep the default priority.
  setpriority(PRIO_PROCESS, static_cast<id_t>(::syscall(SYS_gettid)), 19);
  for (;;) {
    TileAddress addr;
    {
      std::unique_lock lock(mutex_);
      work_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      addr = std::move(queue_.front());
      queue_.pop_front();
      ++busy_;
    }
    try {
      repo_.warm_tile(addr);
    } catch (const std::exception& e) {
      log()->debug("prefetch of {}/{}/{}_{} skipped: {}", addr.slide_id, addr.level, addr.col,
                   addr.row, e.what());
    }
    {
      std::lock_guard lock(mutex_);
      --busy_;
      if (queue_.empty() && busy_ == 0) idle_cv_.notify_all();
    }
  }
}

// ---------------------------------------------------------------------------
// Request helpers

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kImmutable = "public, max-age=31536000, immutable";

thread_local std::chrono::steady_clock::time_point t_request_start;

void send_error(httplib::Response& res, Errc code, const std::string& message,
                const json& extra = json::object()) {
  json body = {{"code", std::string(code_name(code))}, {"message", message}};
  for (const auto& [k, v] : extra.items()) body[k] = v;
  res.status = http_status(code);
  res.set_content(json{{"error", body}}.dump(), kJson);
}

void send_json(httplib::Response& res, const json& doc, int status = 200) {
  res.status = status;
  res.set_content(doc.dump(), kJson);
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      json extra = json::object();
      if (const auto* up = dynamic_cast<const assistant::UpstreamError*>(&e)) {
        extra["upstream_status"] = up->upstream_status();
      }
      send_error(res, e.code(), e.what(), extra);
    } catch (const std::exception& e) {
      log()->error("unhandled error on {} {}: {}", req.method, req.path, e.what());
      send_error(res, Errc::internal, "internal error");
    }
  };
}

std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
    throw Error(Errc::validation, fmt::format("{} must be an integer, got '{}'", what, text));
  }
  return v;
}

int to_int(std::int64_t v, std::string_view what) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw Error(Errc::validation, fmt::format("{} out of range", what));
  }
  return static_cast<int>(v);
}

std::int64_t query_int(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) {
    throw Error(Errc::validation, fmt::format("query parameter '{}' is required", key));
  }
  return parse_int(req.get_param_value(key), key);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json doc = json::parse(req.body);
    if (!doc.is_object()) throw Error(Errc::validation, "request body must be a JSON object");
    return doc;
  } catch (const json::exception& e) {
    throw Error(Errc::validation, fmt::format("request body is not valid JSON: {}", e.what()));
  }
}

std::int64_t body_int(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end()) throw Error(Errc::validation, fmt::format("field '{}' is required", key));
  if (!it->is_number_integer()) {
    throw Error(Errc::validation, fmt::format("field '{}' must be an integer", key));
  }
  return it->get<std::int64_t>();
}

template <class Tag>
LevelRect<Tag> body_rect(const json& doc) {
  if (!doc.is_object()) throw Error(Errc::validation, "rectangle must be an object");
  return {to_int(body_int(doc, "level"), "level"), body_int(doc, "x"), body_int(doc, "y"),
          body_int(doc, "w"), body_int(doc, "h")};
}

TileCodec codec_for_ext(std::string_view ext) {
  if (ext == "jpeg") return TileCodec::jpeg;
  for (TileCodec c : {TileCodec::png, TileCodec::jpeg}) {
    if (ext == codec_extension(c) || ext == codec_name(c)) return c;
  }
  throw Error(Errc::unsupported, fmt::format("unsupported image format '{}'", ext));
}

std::string quoted_digest(std::span<const std::uint8_t> bytes) {
  return "\"" + sha256_hex(bytes).substr(0, 32) + "\"";
}

bool etag_matches(const httplib::Request& req, const std::string& etag) {
  if (!req.has_header("If-None-Match")) return false;
  const std::string v = req.get_header_value("If-None-Match");
  return v == "*" || v.find(etag) != std::string::npos;
}

json cache_stats_json(const CacheStats& s) {
  return {{"hits", s.hits},
          {"misses", s.misses},
          {"evictions", s.evictions},
          {"current_bytes", s.current_bytes},
          {"current_entries", s.current_entries},
          {"capacity", s.capacity},
          {"hit_rate", s.hit_rate()}};
}

json summary_json(const SlideMetadata& m) {
  return {{"slide_id", m.slide_id},
          {"width_px", m.width_px},
          {"height_px", m.height_px},
          {"mpp", m.mpp ? json(*m.mpp) : json(nullptr)},
          {"tile_size", m.tile_size},
          {"max_level", m.max_level},
          {"channels", m.channels},
          {"codec", std::string(codec_name(m.codec))},
          {"tile_ext", std::string(codec_extension(m.codec))}};
}

json metadata_json(const SlideMetadata& m) {
  json doc = summary_json(m);
  json levels = json::array();
  for (int l = 0; l <= m.max_level; ++l) {
    const LevelSpec s = level_spec(m, l);
    levels.push_back({{"level", s.level},
                      {"width_px", s.width_px},
                      {"height_px", s.height_px},
                      {"downsample", s.downsample},
                      {"cols", s.cols},
                      {"rows", s.rows}});
  }
  doc["levels"] = std::move(levels);
  return doc;
}

json rect_json(const Viewport& v) {
  return {{"level", v.level}, {"x", v.x}, {"y", v.y}, {"w", v.width}, {"h", v.height}};
}

json turn_json(const assistant::ChatTurn& t) {
  json doc = {{"user_text", t.user_text},
              {"status", t.status == assistant::TurnStatus::completed ? "completed" : "failed"},
              {"backend_latency_ms", t.backend_latency.count()}};
  if (t.status == assistant::TurnStatus::completed) {
    doc["text"] = t.assistant_text;
    doc["backend_text"] = t.backend_text;
  } else {
    doc["error_code"] = t.error_code;
  }
  if (t.viewport_context) {
    json ctx = {{"slide_id", t.viewport_context->slide_id},
                {"viewport", rect_json(t.viewport_context->viewport)}};
    if (t.viewport_context->extent) {
      ctx["width_um"] = t.viewport_context->extent->width_um;
      ctx["height_um"] = t.viewport_context->extent->height_um;
      ctx["field_of_view"] = assistant::format_field_of_view(*t.viewport_context->extent);
    }
    doc["viewport_context"] = std::move(ctx);
  }
  return doc;
}

json session_json(const assistant::ChatSession& s) {
  json turns = json::array();
  for (const auto& t : s.turns) turns.push_back(turn_json(t));
  return {{"session_id", s.session_id},
          {"slide_id", s.slide ? json(s.slide->slide_id) : json(nullptr)},
          {"created_at_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                                s.created_at.time_since_epoch())
                                .count()},
          {"turns", std::move(turns)}};
}

// Largest level whose longest side fits a search-result panel.
std::string thumbnail_url(const SlideMetadata& m) {
  int best = 0;
  for (int l = 0; l <= m.max_level; ++l) {
    const LevelSpec s = level_spec(m, l);
    if (std::max(s.width_px, s.height_px) <= 256) best = l;
  }
  const LevelSpec s = level_spec(m, best);
  return fmt::format("/api/v1/slides/{}/region?level={}&x=0&y=0&w={}&h={}&fmt=png", m.slide_id,
                     best, s.width_px, s.height_px);
}

}  // namespace

// ---------------------------------------------------------------------------
// TileService

TileService::TileService(ServerConfig cfg) : TileService(cfg, make_backend(cfg.assistant)) {}

TileService::TileService(ServerConfig cfg, std::shared_ptr<assistant::ChatBackend> backend)
    : cfg_(std::move(cfg)),
      repo_(PyramidStore(cfg_.store_root), cfg_.cache),
      cbir_(repo_, cbir::default_index_path(repo_.store()), cfg_.cbir_auto_refresh),
      assistant_(repo_, std::move(backend),
                 assistant::AssistantConfig{cfg_.assistant.max_context_turns}),
      prefetch_(repo_, cfg_.prefetch_workers, cfg_.prefetch_queue),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

TileService::~TileService() { stop(); }

void TileService::install_routes() {
  httplib::Server& s = *server_;
  const unsigned threads = std::max(1u, cfg_.http_threads);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  s.set_tcp_nodelay(true);
  // SO_REUSEADDR only: a second server on a taken port must fail, not share it.
  s.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  s.set_keep_alive_max_count(10'000);
  s.set_keep_alive_timeout(30);

  s.set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
    t_request_start = std::chrono::steady_clock::now();
    return httplib::Server::HandlerResponse::Unhandled;
  });
  s.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_request_start)
            .count();
    const std::string cache = res.has_header("X-Cache") ? res.get_header_value("X-Cache") : "-";
    log()->info("{} {} {} {:.2f}ms {}", req.method, req.path, res.status, ms, cache);
  });
  // Fills a body only for statuses no handler produced (unmatched routes).
  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    if (res.status == 404) {
      send_error(res, Errc::not_found, fmt::format("no route for {} {}", req.method, req.path));
    } else {
      json body = {{"error", {{"code", res.status >= 500 ? "INTERNAL" : "VALIDATION"},
                              {"message", httplib::status_message(res.status)}}}};
      res.set_content(body.dump(), kJson);
    }
    return httplib::Server::HandlerResponse::Handled;
  });

  s.Get("/api/v1/slides", guarded([this](const httplib::Request&, httplib::Response& res) {
          json list = json::array();
          for (const auto& id : repo_.store().list_slide_ids()) {
            try {
              list.push_back(summary_json(repo_.open_slide(id)->meta));
            } catch (const Error& e) {
              log()->warn("omitting slide '{}' from listing: {} ({})", id, e.what(),
                          code_name(e.code()));
            }
          }
          send_json(res, list);
        }));

  s.Get(R"(/api/v1/slides/([^/]+))", guarded([this](const httplib::Request& req,
                                                    httplib::Response& res) {
          const auto slide = repo_.open_slide(req.matches[1].str());
          const std::string etag = "\"" + slide->meta_digest.substr(0, 32) + "\"";
          res.set_header("ETag", etag);
          res.set_header("Cache-Control", "no-cache");
          if (etag_matches(req, etag)) {
            res.status = 304;
            return;
          }
          send_json(res, metadata_json(slide->meta));
        }));

  s.Get(R"(/api/v1/slides/([^/]+)/tiles/([^/]+)/([^/_]+)_([^/.]+)\.([A-Za-z]+))",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          TileAddress addr{req.matches[1].str(), to_int(parse_int(req.matches[2].str(), "level"), "level"),
                           parse_int(req.matches[3].str(), "col"),
                           parse_int(req.matches[4].str(), "row")};
          const TileCodec want = codec_for_ext(req.matches[5].str());
          const TilePayload p = repo_.get_tile(addr);
          res.set_header("X-Cache", p.cache_hit ? "hit" : "miss");
          res.set_header("Cache-Control", kImmutable);

          std::string etag = p.tile->etag;
          std::string body;
          if (want == p.codec) {
            body.assign(p.tile->bytes.begin(), p.tile->bytes.end());
          } else {
            const auto bytes = encode_image(decode_image(p.tile->bytes), want);
            etag = quoted_digest(bytes);
            body.assign(bytes.begin(), bytes.end());
          }
          res.set_header("ETag", etag);
          if (etag_matches(req, etag)) {
            res.status = 304;
            return;
          }
          res.status = 200;
          res.set_content(std::move(body), std::string(codec_mime(want)));
        }));

  s.Get(R"(/api/v1/slides/([^/]+)/region)",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          const std::string id = req.matches[1].str();
          const Region region{to_int(query_int(req, "level"), "level"), query_int(req, "x"),
                              query_int(req, "y"), query_int(req, "w"), query_int(req, "h")};
          const TileCodec fmt =
              req.has_param("fmt") ? codec_for_ext(req.get_param_value("fmt")) : TileCodec::png;
          if (region.width > 0 && region.height > 0 &&
              (region.width > cfg_.region_limit_px / region.height)) {
            send_error(res, Errc::payload_too_large,
                       fmt::format("region of {}x{} px exceeds the limit of {} px", region.width,
                                   region.height, cfg_.region_limit_px),
                       {{"limit_px", cfg_.region_limit_px}});
            return;
          }
          const auto bytes = encode_image(repo_.render_region(id, region), fmt);
          const std::string etag = quoted_digest(bytes);
          res.set_header("ETag", etag);
          res.set_header("Cache-Control", kImmutable);
          if (etag_matches(req, etag)) {
            res.status = 304;
            return;
          }
          res.status = 200;
          res.set_content(std::string(bytes.begin(), bytes.end()), std::string(codec_mime(fmt)));
        }));

  s.Post(R"(/api/v1/slides/([^/]+)/prefetch)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const auto slide = repo_.open_slide(req.matches[1].str());
           const json body = parse_body(req);
           const Viewport vp = body_rect<ViewportTag>(body);
           const std::int64_t ring = body.contains("ring") ? body_int(body, "ring") : 0;
           if (ring < 0 || ring > 4) {
             throw Error(Errc::validation, fmt::format("ring must be in [0, 4], got {}", ring));
           }
           const TileRange range =
               expand_range(slide->meta, tile_range(slide->meta, vp), static_cast<int>(ring));
           const std::size_t n = prefetch_.schedule(tiles_in_range(slide->meta, range));
           send_json(res, {{"scheduled", n}}, 202);
         }));

  s.Post(R"(/api/v1/slides/([^/]+)/search)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const std::string id = req.matches[1].str();
           const json body = parse_body(req);
           cbir::SearchConfig cfg;
           if (body.contains("k")) cfg.k = to_int(body_int(body, "k"), "k");
           std::optional<Region> region;
           if (body.contains("region") && !body["region"].is_null()) {
             region = body_rect<RegionTag>(body["region"]);
           }
           const cbir::SearchResponse r = cbir_.search_slide(id, region, cfg);
           json hits = json::array();
           int rank = 1;
           for (const auto& h : r.result.hits) {
             json hit = {{"rank", rank++}, {"slide_id", h.slide_id}, {"score", h.score}};
             try {
               hit["thumbnail_url"] = thumbnail_url(repo_.open_slide(h.slide_id)->meta);
             } catch (const Error&) {
               hit["thumbnail_url"] = nullptr;
             }
             hits.push_back(std::move(hit));
           }
           send_json(res, {{"slide_id", id},
                           {"region", region ? rect_json(rect_cast<ViewportTag>(*region)) : json(nullptr)},
                           {"k", r.k},
                           {"hits", std::move(hits)},
                           {"warnings", r.warnings}});
         }));

  s.Get("/api/v1/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
          const CacheSnapshot snap = repo_.cache_stats();
          send_json(res, {{"tiles", cache_stats_json(snap.tiles)},
                          {"slides", cache_stats_json(snap.slides)}});
        }));

  s.Post("/api/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           std::optional<std::string> slide;
           if (body.contains("slide_id") && !body["slide_id"].is_null()) {
             if (!body["slide_id"].is_string()) {
               throw Error(Errc::validation, "field 'slide_id' must be a string");
             }
             slide = body["slide_id"].get<std::string>();
           }
           const std::string id = assistant_.create_session(slide);
           send_json(res, session_json(assistant_.session(id)), 201);
         }));

  s.Post(R"(/api/v1/sessions/([^/]+)/ask)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = parse_body(req);
           const auto text = body.find("text");
           if (text == body.end() || !text->is_string()) {
             throw Error(Errc::validation, "field 'text' must be a string");
           }
           std::optional<Viewport> vp;
           if (body.contains("viewport") && !body["viewport"].is_null()) {
             vp = body_rect<ViewportTag>(body["viewport"]);
           }
           const auto turn = assistant_.ask(req.matches[1].str(), text->get<std::string>(), vp);
           send_json(res, {{"session_id", req.matches[1].str()}, {"turn", turn_json(turn)}});
         }));

  s.Get(R"(/api/v1/sessions/([^/]+))",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          send_json(res, session_json(assistant_.session(req.matches[1].str())));
        }));

  if (cfg_.ui_root) {
    if (!s.set_mount_point("/ui", cfg_.ui_root->string())) {
      throw Error(Errc::config, fmt::format("ui_root '{}' is not a directory", cfg_.ui_root->string()));
    }
  }
}

int TileService::bind() {
  if (port_ >= 0) return port_;
  if (cfg_.listen_port == 0) {
    port_ = server_->bind_to_any_port(cfg_.listen_host);
  } else if (server_->bind_to_port(cfg_.listen_host, cfg_.listen_port)) {
    port_ = cfg_.listen_port;
  }
  if (port_ <= 0) {
    port_ = -1;
    throw Error(Errc::address_in_use,
                fmt::format("cannot bind {}:{}", cfg_.listen_host, cfg_.listen_port));
  }
  log()->info("listening on {}:{} serving store '{}'", cfg_.listen_host, port_,
              cfg_.store_root.string());
  return port_;
}

void TileService::listen() {
  bind();
  server_->listen_after_bind();
}

int TileService::start() {
  const int p = bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return p;
}

void TileService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace slidestream
