#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "slidestream/pyramid.hpp"
#include "slidestream/raster_source.hpp"
#include "slidestream/store.hpp"

namespace slidestream {

inline constexpr int kMinTileSize = 64;
inline constexpr int kMaxTileSize = 4096;

struct IngestOptions {
  std::string slide_id;
  int tile_size = kDefaultTileSize;
  std::optional<double> mpp;
  TileCodec codec = TileCodec::png;
  int jpeg_quality = 90;
  bool overwrite = false;
  /// Tile encoder threads; 0 picks hardware concurrency.
  unsigned workers = 0;
};

struct IngestJob {
  std::filesystem::path source_path;
  IngestOptions options;
};

struct IngestReport {
  std::string slide_id;
  int levels_written = 0;
  std::int64_t tiles_written = 0;
  std::int64_t bytes_written = 0;
  std::chrono::duration<double> wall_time{};
};

/// Throws Errc::validation on a bad id or tile size.
void validate_ingest_options(const IngestOptions& options);

/// Builds the whole pyramid from `source` in tile-row stripes (peak memory
/// about 2 * width * tile_size * 3 bytes), writing into a staging directory
/// that is renamed into place once the meta document is written.
IngestReport ingest(RasterSource& source, const IngestOptions& options, const PyramidStore& store);

/// Opens `job.source_path` and ingests it.
IngestReport ingest(const IngestJob& job, const PyramidStore& store);

}  // namespace slidestream
