#include "slidestream/trace.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "slidestream/error.hpp"

namespace slidestream {

using nlohmann::json;

NavTrace parse_trace(std::string_view text) {
  NavTrace trace;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::istringstream c(line.substr(first + 1));
      std::string key, value;
      if (c >> key >> value && key == "slide:") trace.slide_id = value;
      continue;
    }
    std::istringstream fields(line);
    TraceRecord r;
    std::string rest;
    if (!(fields >> r.offset_ms >> r.viewport.level >> r.viewport.x >> r.viewport.y >>
          r.viewport.width >> r.viewport.height) ||
        (fields >> rest)) {
      throw Error(Errc::validation,
                  fmt::format("trace line {}: expected 'offset_ms level x y w h'", line_no));
    }
    if (r.offset_ms < 0) {
      throw Error(Errc::validation, fmt::format("trace line {}: negative offset", line_no));
    }
    if (!trace.records.empty() && r.offset_ms < trace.records.back().offset_ms) {
      throw Error(Errc::validation, fmt::format("trace line {}: offset decreases", line_no));
    }
    if (r.viewport.width <= 0 || r.viewport.height <= 0 || r.viewport.level < 0) {
      throw Error(Errc::validation,
                  fmt::format("trace line {}: viewport needs level >= 0 and positive size", line_no));
    }
    trace.records.push_back(r);
  }
  if (trace.records.empty()) throw Error(Errc::validation, "trace contains no records");
  return trace;
}

NavTrace read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, fmt::format("cannot read trace '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_trace(ss.str());
}

std::string format_trace(const NavTrace& trace) {
  std::string out;
  if (!trace.slide_id.empty()) out += fmt::format("# slide: {}\n", trace.slide_id);
  for (const auto& r : trace.records) {
    const Viewport& v = r.viewport;
    out += fmt::format("{} {} {} {} {} {}\n", r.offset_ms, v.level, v.x, v.y, v.width, v.height);
  }
  return out;
}

void write_trace_file(const std::filesystem::path& path, const NavTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  out << format_trace(trace);
  if (!out) throw Error(Errc::io, fmt::format("cannot write trace '{}'", path.string()));
}

NavTrace make_pan_trace(const SlideMetadata& meta, const PanTraceOptions& opts) {
  if (opts.steps <= 0) throw Error(Errc::validation, "pan trace needs at least one step");
  if (opts.viewport_width < 4 || opts.viewport_height < 4) {
    throw Error(Errc::validation, "pan viewport must be at least 4x4 px");
  }
  const int level = opts.level < 0 ? meta.max_level : opts.level;
  const LevelSpec spec = level_spec(meta, level);
  const std::int64_t vw = std::min(opts.viewport_width, spec.width_px);
  const std::int64_t vh = std::min(opts.viewport_height, spec.height_px);
  const std::int64_t dx = std::max<std::int64_t>(vw / 4, 1);
  const std::int64_t dy = std::max<std::int64_t>(vh / 4, 1);
  const std::int64_t max_x = spec.width_px - vw;
  const std::int64_t max_y = spec.height_px - vh;

  NavTrace trace;
  trace.slide_id = meta.slide_id;
  std::int64_t x = 0, y = 0;
  int dir = 1;
  for (int i = 0; i < opts.steps; ++i) {
    trace.records.push_back({i * opts.interval_ms, Viewport{level, x, y, vw, vh}});
    const std::int64_t nx = x + dir * dx;
    if (nx >= 0 && nx <= max_x) {
      x = nx;
    } else if (y + dy <= max_y) {
      y += dy;
      dir = -dir;
    } else {
      // Bottom edge reached: keep sweeping the last row back and forth.
      dir = -dir;
      x = std::clamp<std::int64_t>(x + dir * dx, 0, std::max<std::int64_t>(max_x, 0));
    }
  }
  return trace;
}

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
  return samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
}

std::string ReplayReport::to_json() const {
  return json{{"slide_id", slide_id},
              {"viewports", viewports},
              {"requests", requests},
              {"failed", failed},
              {"bytes", bytes},
              {"client_hits", client_hits},
              {"client_misses", client_misses},
              {"server_hits", server_hits},
              {"server_misses", server_misses},
              {"hit_rate", hit_rate},
              {"p50_ms", p50_ms},
              {"p95_ms", p95_ms},
              {"p99_ms", p99_ms},
              {"cached_p95_ms", cached_p95_ms},
              {"wall_ms", wall_ms},
              {"reconciled", reconciled}}
      .dump(2);
}

std::string ReplayReport::to_text() const {
  return fmt::format(
      "slide {}: {} viewports, {} tile requests ({} failed), {} bytes in {:.0f} ms\n"
      "latency p50 {:.2f} ms, p95 {:.2f} ms, p99 {:.2f} ms; cached-tile p95 {:.2f} ms\n"
      "tile cache: {} hits, {} misses, hit rate {:.1f}% ({})\n",
      slide_id, viewports, requests, failed, bytes, wall_ms, p50_ms, p95_ms, p99_ms,
      cached_p95_ms, server_hits, server_misses, hit_rate * 100.0,
      reconciled ? "reconciled with client counts" : "DOES NOT reconcile with client counts");
}

namespace {

std::unique_ptr<httplib::Client> make_client(const ReplayOptions& opts) {
  auto c = std::make_unique<httplib::Client>(opts.server_url);
  if (!c->is_valid()) {
    throw Error(Errc::validation, fmt::format("invalid server URL '{}'", opts.server_url));
  }
  c->set_keep_alive(true);
  c->set_tcp_nodelay(true);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts.timeout);
  c->set_connection_timeout(secs);
  c->set_read_timeout(secs);
  return c;
}

json get_json(httplib::Client& c, const std::string& path, const std::string& server) {
  const auto res = c.Get(path);
  if (!res) {
    throw Error(Errc::connection, fmt::format("cannot reach {}: {}", server,
                                              httplib::to_string(res.error())));
  }
  if (res->status == 404) {
    throw Error(Errc::slide_not_found, fmt::format("GET {} returned 404: {}", path, res->body));
  }
  if (res->status != 200) {
    throw Error(Errc::upstream, fmt::format("GET {} returned {}: {}", path, res->status, res->body));
  }
  return json::parse(res->body);
}

struct TileSample {
  double ms = 0.0;
  bool ok = false;
  bool hit = false;
  std::size_t bytes = 0;
};

}  // namespace

ReplayReport replay_trace(const NavTrace& trace, const ReplayOptions& opts) {
  if (trace.records.empty()) throw Error(Errc::validation, "trace contains no records");
  if (trace.slide_id.empty()) throw Error(Errc::validation, "trace does not name a slide");
  const unsigned par = std::max(1u, opts.parallelism);

  auto control = make_client(opts);
  const json mdoc = get_json(*control, "/api/v1/slides/" + trace.slide_id, opts.server_url);
  SlideMetadata meta = make_metadata(
      mdoc.at("slide_id").get<std::string>(), mdoc.at("width_px").get<std::int64_t>(),
      mdoc.at("height_px").get<std::int64_t>(), mdoc.at("tile_size").get<int>());
  const std::string ext = mdoc.at("tile_ext").get<std::string>();
  if (meta.max_level != mdoc.at("max_level").get<int>()) {
    throw Error(Errc::corrupt, "server metadata is inconsistent");
  }

  std::vector<std::unique_ptr<httplib::Client>> clients;
  for (unsigned i = 0; i < par; ++i) clients.push_back(make_client(opts));

  const json before = get_json(*control, "/api/v1/stats", opts.server_url);

  std::vector<TileSample> samples;
  const auto started = std::chrono::steady_clock::now();
  for (const auto& rec : trace.records) {
    if (opts.honor_timestamps) {
      std::this_thread::sleep_until(started + std::chrono::milliseconds(rec.offset_ms));
    }
    const auto tiles = tiles_for_viewport(meta, rec.viewport);
    std::vector<TileSample> out(tiles.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&](httplib::Client& c) {
      for (std::size_t i = next++; i < tiles.size(); i = next++) {
        const auto& t = tiles[i];
        const std::string path = fmt::format("/api/v1/slides/{}/tiles/{}/{}_{}.{}", t.slide_id,
                                             t.level, t.col, t.row, ext);
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = c.Get(path);
        TileSample& s = out[i];
        s.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (res && res->status == 200) {
          s.ok = true;
          s.bytes = res->body.size();
          s.hit = res->get_header_value("X-Cache") == "hit";
        }
      }
    };
    const unsigned n = static_cast<unsigned>(std::min<std::size_t>(par, tiles.size()));
    std::vector<std::thread> threads;
    for (unsigned i = 1; i < n; ++i) threads.emplace_back(worker, std::ref(*clients[i]));
    worker(*clients[0]);
    for (auto& th : threads) th.join();
    samples.insert(samples.end(), out.begin(), out.end());
  }
  const double wall =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

  const json after = get_json(*control, "/api/v1/stats", opts.server_url);

  ReplayReport r;
  r.slide_id = trace.slide_id;
  r.viewports = trace.records.size();
  r.wall_ms = wall;
  std::vector<double> all, cached;
  for (const auto& s : samples) {
    ++r.requests;
    if (!s.ok) {
      ++r.failed;
      continue;
    }
    r.bytes += s.bytes;
    all.push_back(s.ms);
    if (s.hit) {
      ++r.client_hits;
      cached.push_back(s.ms);
    } else {
      ++r.client_misses;
    }
  }
  r.p50_ms = percentile(all, 50);
  r.p95_ms = percentile(all, 95);
  r.p99_ms = percentile(all, 99);
  r.cached_p95_ms = percentile(cached, 95);
  r.server_hits = after["tiles"]["hits"].get<std::uint64_t>() - before["tiles"]["hits"].get<std::uint64_t>();
  r.server_misses =
      after["tiles"]["misses"].get<std::uint64_t>() - before["tiles"]["misses"].get<std::uint64_t>();
  const std::uint64_t lookups = r.server_hits + r.server_misses;
  r.hit_rate = lookups ? static_cast<double>(r.server_hits) / static_cast<double>(lookups) : 0.0;
  r.reconciled = r.failed == 0 && r.server_hits == r.client_hits && r.server_misses == r.client_misses;
  return r;
}

}  // namespace slidestream
