// slidestream: ingest, serve, index, search, replay and synth subcommands.

#include <signal.h>

#include <cstdlib>
#include <iostream>
#include <regex>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "slidestream/cbir.hpp"
#include "slidestream/config.hpp"
#include "slidestream/error.hpp"
#include "slidestream/ingest.hpp"
#include "slidestream/logging.hpp"
#include "slidestream/raster_source.hpp"
#include "slidestream/synthetic.hpp"
#include "slidestream/tile_service.hpp"
#include "slidestream/trace.hpp"

namespace ss = slidestream;
using nlohmann::json;

namespace {

struct Globals {
  std::string store;
  std::string config;
  std::string log_level = "info";
};

ss::ServerConfig resolve_config(const Globals& g) {
  ss::ServerConfig cfg = g.config.empty() ? ss::ServerConfig{} : ss::load_config_file(g.config);
  ss::apply_env_overrides(cfg, [](const char* name) { return std::getenv(name); });
  if (!g.store.empty()) cfg.store_root = g.store;
  return cfg;
}

std::pair<std::int64_t, std::int64_t> parse_dims(const std::string& text) {
  static const std::regex re(R"((\d{1,9})[xX](\d{1,9}))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw ss::Error(ss::Errc::validation, fmt::format("expected WIDTHxHEIGHT, got '{}'", text));
  }
  return {std::stoll(m[1]), std::stoll(m[2])};
}

ss::Region parse_region(const std::string& text) {
  static const std::regex re(R"((\d+),(-?\d+),(-?\d+),(\d+),(\d+))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw ss::Error(ss::Errc::validation, fmt::format("expected level,x,y,w,h, got '{}'", text));
  }
  return {std::stoi(m[1]), std::stoll(m[2]), std::stoll(m[3]), std::stoll(m[4]), std::stoll(m[5])};
}

ss::TileCodec parse_codec_flag(const std::string& name) {
  const auto c = ss::parse_codec(name);
  if (!c) throw ss::Error(ss::Errc::validation, fmt::format("unknown codec '{}'", name));
  return *c;
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string source;
  std::string id;
  std::string synthetic;
  std::uint64_t seed = 1;
  int tile_size = ss::kDefaultTileSize;
  std::string codec = "png";
  std::optional<double> mpp;
  int quality = 90;
  bool overwrite = false;
  unsigned workers = 0;
};

int run_ingest(const Globals& g, const IngestArgs& a) {
  const ss::ServerConfig cfg = resolve_config(g);
  const ss::PyramidStore store(cfg.store_root);
  ss::IngestOptions opts;
  opts.slide_id = a.id;
  opts.tile_size = a.tile_size;
  opts.mpp = a.mpp;
  opts.codec = parse_codec_flag(a.codec);
  opts.jpeg_quality = a.quality;
  opts.overwrite = a.overwrite;
  opts.workers = a.workers;

  ss::IngestReport report;
  if (!a.synthetic.empty()) {
    if (!a.source.empty()) {
      throw ss::Error(ss::Errc::validation, "give either a source file or --synthetic, not both");
    }
    const auto [w, h] = parse_dims(a.synthetic);
    const ss::SyntheticSlide slide(w, h, a.seed);
    auto src = slide.source();
    report = ss::ingest(*src, opts, store);
  } else {
    if (a.source.empty()) throw ss::Error(ss::Errc::validation, "a source file or --synthetic is required");
    report = ss::ingest(ss::IngestJob{a.source, opts}, store);
  }
  fmt::print("ingested {}: {} levels, {} tiles, {} bytes in {:.2f} s\n", report.slide_id,
             report.levels_written, report.tiles_written, report.bytes_written,
             report.wall_time.count());
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string listen;
};

int run_serve(const Globals& g, const ServeArgs& a) {
  ss::ServerConfig cfg = resolve_config(g);
  if (!a.listen.empty()) {
    const auto colon = a.listen.rfind(':');
    if (colon == std::string::npos) throw ss::Error(ss::Errc::config, "--listen must be host:port");
    cfg.listen_host = a.listen.substr(0, colon);
    try {
      cfg.listen_port = std::stoi(a.listen.substr(colon + 1));
    } catch (const std::exception&) {
      throw ss::Error(ss::Errc::config, "--listen port is not a number");
    }
  }
  if (!std::filesystem::is_directory(cfg.store_root)) {
    throw ss::Error(ss::Errc::io, fmt::format("store root '{}' is not a directory", cfg.store_root.string()));
  }

  // Signals are blocked in every thread and consumed by one waiter, so the
  // server threads never run a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  ss::TileService service(cfg);
  const int port = service.bind();
  fmt::print("listening on http://{}:{}\n", cfg.listen_host, port);
  std::fflush(stdout);

  std::thread waiter([&service, set] {
    int sig = 0;
    sigwait(&set, &sig);
    ss::log()->info("received signal {}, draining", sig);
    service.stop();
  });
  service.listen();
  // listen() can also return without a signal; wake the waiter then.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.prefetch().drain();
  ss::log()->info("server stopped");
  return 0;
}

// ---------------------------------------------------------------------------

int run_index(const Globals& g) {
  const ss::ServerConfig cfg = resolve_config(g);
  ss::SlideRepository repo{ss::PyramidStore(cfg.store_root), cfg.cache};
  ss::cbir::CbirService svc(repo, ss::cbir::default_index_path(repo.store()));
  const auto index = svc.rebuild();
  fmt::print("indexed {} slides into {}\n", index->size(),
             ss::cbir::default_index_path(repo.store()).string());
  return 0;
}

struct SearchArgs {
  std::string slide;
  int k = ss::cbir::kDefaultK;
  std::string region;
  bool json = false;
};

int run_search(const Globals& g, const SearchArgs& a) {
  const ss::ServerConfig cfg = resolve_config(g);
  ss::SlideRepository repo{ss::PyramidStore(cfg.store_root), cfg.cache};
  ss::cbir::CbirService svc(repo, ss::cbir::default_index_path(repo.store()), cfg.cbir_auto_refresh);
  std::optional<ss::Region> region;
  if (!a.region.empty()) region = parse_region(a.region);
  ss::cbir::SearchConfig sc;
  sc.k = a.k;
  const auto r = svc.search_slide(a.slide, region, sc);
  for (const auto& w : r.warnings) ss::log()->warn("{}", w);
  if (a.json) {
    json hits = json::array();
    int rank = 1;
    for (const auto& h : r.result.hits) {
      hits.push_back({{"rank", rank++}, {"slide_id", h.slide_id}, {"score", h.score}});
    }
    fmt::print("{}\n", json{{"slide_id", a.slide}, {"k", r.k}, {"hits", hits}, {"warnings", r.warnings}}.dump(2));
  } else {
    int rank = 1;
    for (const auto& h : r.result.hits) fmt::print("{:>2}  {:<32}  {:.6f}\n", rank++, h.slide_id, h.score);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ReplayArgs {
  std::string trace;
  std::string server = "http://127.0.0.1:8080";
  std::string slide;
  unsigned parallelism = 4;
  bool no_wait = false;
  bool json = false;
};

int run_replay(const ReplayArgs& a) {
  ss::NavTrace trace = ss::read_trace_file(a.trace);
  if (!a.slide.empty()) trace.slide_id = a.slide;
  ss::ReplayOptions opts;
  opts.server_url = a.server;
  opts.parallelism = a.parallelism;
  opts.honor_timestamps = !a.no_wait;
  const ss::ReplayReport r = ss::replay_trace(trace, opts);
  if (a.json) {
    fmt::print("{}\n", r.to_json());
  } else {
    fmt::print("{}", r.to_text());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthImageArgs {
  std::string dims = "1024x1024";
  std::uint64_t seed = 1;
  std::string out;
};

int run_synth_image(const SynthImageArgs& a) {
  const auto [w, h] = parse_dims(a.dims);
  if (w * h > std::int64_t{1} << 28) {
    throw ss::Error(ss::Errc::validation, "synth image is limited to 2^28 pixels; use ingest --synthetic");
  }
  ss::write_raster_file(a.out, ss::SyntheticSlide(w, h, a.seed).render_all());
  fmt::print("wrote {} ({}x{}, seed {})\n", a.out, w, h, a.seed);
  return 0;
}

struct SynthTraceArgs {
  std::string slide;
  int level = -1;
  std::string viewport = "1024x768";
  int steps = 200;
  std::int64_t interval_ms = 50;
  std::string out;
};

int run_synth_trace(const Globals& g, const SynthTraceArgs& a) {
  const ss::ServerConfig cfg = resolve_config(g);
  const ss::PyramidStore store(cfg.store_root);
  const ss::SlideMetadata meta = store.read_metadata(a.slide);
  const auto [vw, vh] = parse_dims(a.viewport);
  ss::PanTraceOptions opts;
  opts.level = a.level;
  opts.viewport_width = vw;
  opts.viewport_height = vh;
  opts.steps = a.steps;
  opts.interval_ms = a.interval_ms;
  const ss::NavTrace trace = ss::make_pan_trace(meta, opts);
  ss::write_trace_file(a.out, trace);
  fmt::print("wrote {} ({} records)\n", a.out, trace.records.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-slide image pyramid store and tile server"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--store", g.store, "Store root directory (overrides config)");
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build a tile pyramid from an image or a synthetic slide");
  c_ingest->add_option("source", ingest.source, "PNG, JPEG or PPM source image");
  c_ingest->add_option("--id", ingest.id, "Slide id [a-z0-9_-]{1,64}")->required();
  c_ingest->add_option("--synthetic", ingest.synthetic, "Generate a WxH procedural slide instead of reading a file");
  c_ingest->add_option("--seed", ingest.seed, "Seed for --synthetic");
  c_ingest->add_option("--tile-size", ingest.tile_size, "Tile edge in pixels");
  c_ingest->add_option("--codec", ingest.codec, "png (lossless) or jpeg");
  c_ingest->add_option("--mpp", ingest.mpp, "Microns per pixel at full resolution");
  c_ingest->add_option("--quality", ingest.quality, "JPEG quality")->check(CLI::Range(1, 100));
  c_ingest->add_option("--workers", ingest.workers, "Encoder threads (0: all cores)");
  c_ingest->add_flag("--overwrite", ingest.overwrite, "Replace an existing slide with the same id");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Serve the store over HTTP until SIGINT/SIGTERM");
  c_serve->add_option("--listen", serve.listen, "host:port (overrides config)");

  auto* c_index = app.add_subcommand("index", "Build the similarity-search index");

  SearchArgs search;
  auto* c_search = app.add_subcommand("search", "Find slides similar to a slide or a region of it");
  c_search->add_option("slide", search.slide, "Query slide id")->required();
  c_search->add_option("-k", search.k, "Number of hits");
  c_search->add_option("--region", search.region, "level,x,y,w,h");
  c_search->add_flag("--json", search.json, "Machine-readable output");

  ReplayArgs replay;
  auto* c_replay = app.add_subcommand("replay", "Replay a navigation trace against a running server");
  c_replay->add_option("trace", replay.trace, "Trace file")->required();
  c_replay->add_option("--server", replay.server, "Server base URL");
  c_replay->add_option("--slide", replay.slide, "Slide id (overrides the trace header)");
  c_replay->add_option("--parallelism", replay.parallelism, "Concurrent tile requests")
      ->check(CLI::Range(1, 64));
  c_replay->add_flag("--no-wait", replay.no_wait, "Ignore trace timestamps");
  c_replay->add_flag("--json", replay.json, "Machine-readable output");

  auto* c_synth = app.add_subcommand("synth", "Generate synthetic test inputs");
  c_synth->require_subcommand(1);
  SynthImageArgs synth_image;
  auto* c_synth_image = c_synth->add_subcommand("image", "Write a procedural slide image");
  c_synth_image->add_option("--size", synth_image.dims, "WxH");
  c_synth_image->add_option("--seed", synth_image.seed, "Texture seed");
  c_synth_image->add_option("-o,--output", synth_image.out, "Output .png, .jpg or .ppm")->required();
  SynthTraceArgs synth_trace;
  auto* c_synth_trace = c_synth->add_subcommand("trace", "Write a quarter-viewport pan trace for a stored slide");
  c_synth_trace->add_option("--slide", synth_trace.slide, "Slide id")->required();
  c_synth_trace->add_option("--level", synth_trace.level, "Pyramid level (default: full resolution)");
  c_synth_trace->add_option("--viewport", synth_trace.viewport, "WxH viewport size");
  c_synth_trace->add_option("--steps", synth_trace.steps, "Number of viewports");
  c_synth_trace->add_option("--interval-ms", synth_trace.interval_ms, "Time between viewports");
  c_synth_trace->add_option("-o,--output", synth_trace.out, "Output trace file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  ss::log()->set_level(spdlog::level::from_str(g.log_level));
  try {
    if (*c_ingest) return run_ingest(g, ingest);
    if (*c_serve) return run_serve(g, serve);
    if (*c_index) return run_index(g);
    if (*c_search) return run_search(g, search);
    if (*c_replay) return run_replay(replay);
    if (*c_synth_image) return run_synth_image(synth_image);
    if (*c_synth_trace) return run_synth_trace(g, synth_trace);
  } catch (const ss::Error& e) {
    std::cerr << "error: " << ss::code_name(e.code()) << ": " << e.what() << "\n";
    return ss::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: INTERNAL: " << e.what() << "\n";
    return ss::exit_code(ss::Errc::internal);
  }
  return 1;
}
