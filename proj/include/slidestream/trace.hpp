#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "slidestream/pyramid.hpp"

namespace slidestream {

struct TraceRecord {
  std::int64_t offset_ms = 0;
  Viewport viewport;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

/// Recorded navigation: viewports in request order with non-decreasing
/// offsets from the start of the session.
struct NavTrace {
  std::string slide_id;
  std::vector<TraceRecord> records;

  friend bool operator==(const NavTrace&, const NavTrace&) = default;
};

/// Text form: one `offset_ms level x y w h` record per line. `#` starts a
/// comment; a `# slide: <id>` comment names the slide. Errc::validation
/// with the 1-based line number on malformed input, decreasing offsets or an
/// empty trace.
NavTrace parse_trace(std::string_view text);
NavTrace read_trace_file(const std::filesystem::path& path);

std::string format_trace(const NavTrace& trace);
void write_trace_file(const std::filesystem::path& path, const NavTrace& trace);

struct PanTraceOptions {
  int level = -1;  // -1: full resolution
  std::int64_t viewport_width = 1024;
  std::int64_t viewport_height = 768;
  int steps = 200;
  std::int64_t interval_ms = 50;
};

/// Serpentine pan across `level`: each step moves a quarter viewport along
/// the row, and a quarter viewport down when the row edge is reached, so
/// successive viewports overlap by three quarters.
NavTrace make_pan_trace(const SlideMetadata& meta, const PanTraceOptions& opts = {});

struct ReplayOptions {
  std::string server_url;  // http://host:port
  unsigned parallelism = 4;
  bool honor_timestamps = true;
  std::chrono::milliseconds timeout{10'000};
};

struct ReplayReport {
  std::string slide_id;
  std::size_t viewports = 0;
  std::uint64_t requests = 0;
  std::uint64_t failed = 0;
  std::uint64_t bytes = 0;
  std::uint64_t client_hits = 0;    // responses marked X-Cache: hit
  std::uint64_t client_misses = 0;
  std::uint64_t server_hits = 0;    // tile-cache stats delta
  std::uint64_t server_misses = 0;
  double hit_rate = 0.0;            // server_hits / (server_hits + server_misses)
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  double cached_p95_ms = 0.0;
  double wall_ms = 0.0;
  bool reconciled = false;  // client and server counts agree exactly

  std::string to_json() const;
  std::string to_text() const;
};

/// Nearest-rank percentile, p in (0, 100]. Zero for an empty sample.
double percentile(std::vector<double> samples, double p);

/// Fetches tiles_for_viewport of every record from a running server.
/// Errc::connection when the server cannot be reached.
ReplayReport replay_trace(const NavTrace& trace, const ReplayOptions& opts);

}  // namespace slidestream
