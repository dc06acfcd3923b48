#include "slidestream/ingest.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "slidestream/error.hpp"
#include "slidestream/image.hpp"
#include "slidestream/logging.hpp"

namespace slidestream {

namespace fs = std::filesystem;

namespace {

struct TileSink {
  const SlideMetadata& meta;
  fs::path dir;
  int jpeg_quality;
  unsigned workers;
  std::atomic<std::int64_t> tiles{0};
  std::atomic<std::int64_t> bytes{0};

  void write(int level, std::int64_t col, std::int64_t row, const Raster& tile) {
    const auto payload = encode_image(tile, meta.codec, jpeg_quality);
    const fs::path path = PyramidStore::tile_path(dir, meta, level, col, row);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error(Errc::io, fmt::format("failed writing '{}'", path.string()));
    tiles += 1;
    bytes += static_cast<std::int64_t>(payload.size());
  }
};

// Source pixels covered by each pixel of a level along one axis: the
// clipped extent of its downsample-wide block.
std::vector<std::uint32_t> coverage(std::int64_t source_extent, std::int64_t level_extent,
                                    std::int64_t downsample) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(level_extent));
  for (std::int64_t i = 0; i < level_extent; ++i) {
    out[static_cast<std::size_t>(i)] =
        static_cast<std::uint32_t>(std::min(downsample, source_extent - i * downsample));
  }
  return out;
}

// Receives the rows of one level top to bottom, cuts full stripes into
// tiles, and feeds row pairs to the next coarser level. Rows travel in 8.8
// fixed point and children are weighted by the source pixels they cover, so
// every level pixel is its source block mean with one rounding at encode.
class LevelWriter {
 public:
  LevelWriter(const SlideMetadata& meta, int level, TileSink& sink, LevelWriter* coarser)
      : meta_(meta), spec_(level_spec(meta, level)), sink_(sink), coarser_(coarser),
        col_w_(coverage(meta.width_px, spec_.width_px, spec_.downsample)),
        row_w_(coverage(meta.height_px, spec_.height_px, spec_.downsample)),
        stripe_(spec_.width_px, meta.tile_size, 3),
        pending_(static_cast<std::size_t>(spec_.width_px * 3)),
        reduced_(static_cast<std::size_t>(((spec_.width_px + 1) / 2) * 3)) {
    fs::create_directories(sink_.dir / std::to_string(level));
  }

  void push_row(std::span<const std::uint16_t> row) {
    std::uint8_t* dst = stripe_.row(stripe_rows_);
    for (std::size_t i = 0; i < stripe_.stride(); ++i) {
      dst[i] = static_cast<std::uint8_t>((row[i] + 128u) >> 8);
    }
    ++stripe_rows_;
    const std::int64_t y = rows_seen_++;
    if (stripe_rows_ == meta_.tile_size) flush_stripe();
    if (!coarser_) return;
    if (has_pending_) {
      reduce(pending_, row, y - 1);
      coarser_->push_row(reduced_);
      has_pending_ = false;
    } else {
      std::copy(row.begin(), row.end(), pending_.begin());
      has_pending_ = true;
    }
  }

  void finish() {
    if (stripe_rows_ > 0) flush_stripe();
    if (rows_seen_ != spec_.height_px) {
      throw Error(Errc::internal, fmt::format("level {} received {} rows, expected {}",
                                              spec_.level, rows_seen_, spec_.height_px));
    }
    if (!coarser_) return;
    if (has_pending_) {
      reduce(pending_, {}, spec_.height_px - 1);
      coarser_->push_row(reduced_);
      has_pending_ = false;
    }
    coarser_->finish();
  }

 private:
  // Weighted mean of the 2x2 (or clipped) child block; `bottom` is empty
  // when `top` (level row y) is the last row.
  void reduce(std::span<const std::uint16_t> top, std::span<const std::uint16_t> bottom,
              std::int64_t y) {
    const std::uint64_t wt = row_w_[static_cast<std::size_t>(y)];
    const std::uint64_t wb = bottom.empty() ? 0 : row_w_[static_cast<std::size_t>(y + 1)];
    const std::int64_t out_w = (spec_.width_px + 1) / 2;
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      const std::size_t x0 = static_cast<std::size_t>(2 * ox);
      const std::uint64_t wl = col_w_[x0];
      const std::uint64_t wr = x0 + 1 < col_w_.size() ? col_w_[x0 + 1] : 0;
      const std::uint64_t den = (wl + wr) * (wt + wb);
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t i0 = x0 * 3 + c;
        std::uint64_t num = wt * (wl * top[i0] + (wr ? wr * top[i0 + 3] : 0));
        if (wb) num += wb * (wl * bottom[i0] + (wr ? wr * bottom[i0 + 3] : 0));
        reduced_[static_cast<std::size_t>(ox) * 3 + c] = static_cast<std::uint16_t>((num + den / 2) / den);
      }
    }
  }

  void flush_stripe() {
    const std::int64_t row = stripe_index_;
    const std::int64_t rows = stripe_rows_;
    const unsigned threads =
        static_cast<unsigned>(std::min<std::int64_t>(std::max(sink_.workers, 1u), spec_.cols));
    auto encode_cols = [&](unsigned first) {
      for (std::int64_t col = first; col < spec_.cols; col += threads) {
        const std::int64_t x = col * meta_.tile_size;
        const std::int64_t w = std::min<std::int64_t>(meta_.tile_size, spec_.width_px - x);
        sink_.write(spec_.level, col, row, crop(stripe_, x, 0, w, rows));
      }
    };
    if (threads <= 1) {
      encode_cols(0);
    } else {
      std::vector<std::exception_ptr> errors(threads);
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            encode_cols(t);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    ++stripe_index_;
    stripe_rows_ = 0;
  }

  const SlideMetadata& meta_;
  LevelSpec spec_;
  TileSink& sink_;
  LevelWriter* coarser_;
  std::vector<std::uint32_t> col_w_;
  std::vector<std::uint32_t> row_w_;
  Raster stripe_;
  std::int64_t stripe_rows_ = 0;
  std::int64_t stripe_index_ = 0;
  std::int64_t rows_seen_ = 0;
  std::vector<std::uint16_t> pending_;
  std::vector<std::uint16_t> reduced_;
  bool has_pending_ = false;
};

class StagingDir {
 public:
  StagingDir(const PyramidStore& store, const std::string& slide_id)
      : path_(store.root() / fmt::format(".{}.ingest", slide_id)) {
    fs::create_directories(store.root());
    if (!fs::create_directory(path_)) {
      throw Error(Errc::conflict,
                  fmt::format("slide '{}' is already being ingested", slide_id));
    }
  }
  ~StagingDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(path_, ec);
    }
  }
  StagingDir(const StagingDir&) = delete;
  StagingDir& operator=(const StagingDir&) = delete;

  const fs::path& path() const { return path_; }
  void commit_to(const fs::path& target) {
    fs::rename(path_, target);
    committed_ = true;
  }

 private:
  fs::path path_;
  bool committed_ = false;
};

}  // namespace

void validate_ingest_options(const IngestOptions& options) {
  validate_slide_id(options.slide_id);
  if (options.tile_size < kMinTileSize || options.tile_size > kMaxTileSize) {
    throw Error(Errc::validation, fmt::format("tile size {} outside [{}, {}]", options.tile_size,
                                              kMinTileSize, kMaxTileSize));
  }
  if (options.mpp && !(*options.mpp > 0.0)) {
    throw Error(Errc::validation, "mpp must be positive");
  }
  if (options.jpeg_quality < 1 || options.jpeg_quality > 100) {
    throw Error(Errc::validation, "jpeg quality must be in [1, 100]");
  }
}

IngestReport ingest(RasterSource& source, const IngestOptions& options, const PyramidStore& store) {
  const auto started = std::chrono::steady_clock::now();
  validate_ingest_options(options);
  if (source.width() < 1 || source.height() < 1) {
    throw Error(Errc::validation, fmt::format("source has dimensions {}x{}", source.width(),
                                              source.height()));
  }
  const fs::path target = store.slide_dir(options.slide_id);
  auto check_conflict = [&] {
    if (!options.overwrite && fs::exists(target)) {
      throw Error(Errc::conflict, fmt::format("slide '{}' already exists", options.slide_id));
    }
  };
  check_conflict();

  const SlideMetadata meta = make_metadata(options.slide_id, source.width(), source.height(),
                                           options.tile_size, options.mpp, options.codec);
  StagingDir staging(store, options.slide_id);
  TileSink sink{meta, staging.path(), options.jpeg_quality,
                options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency())};

  std::vector<std::unique_ptr<LevelWriter>> writers;
  LevelWriter* coarser = nullptr;
  for (int level = 0; level <= meta.max_level; ++level) {
    writers.push_back(std::make_unique<LevelWriter>(meta, level, sink, coarser));
    coarser = writers.back().get();
  }
  LevelWriter& full = *writers.back();

  const std::int64_t band = meta.tile_size;
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(band * meta.width_px * 3));
  const std::size_t stride = static_cast<std::size_t>(meta.width_px * 3);
  std::vector<std::uint16_t> fixed(stride);
  for (std::int64_t y = 0; y < meta.height_px; y += band) {
    const std::int64_t count = std::min(band, meta.height_px - y);
    source.read_rows(rows, count);
    for (std::int64_t r = 0; r < count; ++r) {
      const std::uint8_t* src = rows.data() + static_cast<std::size_t>(r) * stride;
      for (std::size_t i = 0; i < stride; ++i) fixed[i] = static_cast<std::uint16_t>(src[i] << 8);
      full.push_row(fixed);
    }
  }
  full.finish();

  const std::string doc = to_meta_document(meta);
  {
    std::ofstream out(PyramidStore::meta_path(staging.path()), std::ios::binary | std::ios::trunc);
    out << doc;
    if (!out) throw Error(Errc::io, "failed writing meta document");
  }
  check_conflict();
  if (options.overwrite && fs::exists(target)) fs::remove_all(target);
  staging.commit_to(target);

  IngestReport report;
  report.slide_id = meta.slide_id;
  report.levels_written = meta.max_level + 1;
  report.tiles_written = sink.tiles.load();
  report.bytes_written = sink.bytes.load() + static_cast<std::int64_t>(doc.size());
  report.wall_time = std::chrono::steady_clock::now() - started;
  log()->info("ingested slide '{}' ({}x{}, {} levels, {} tiles, {} bytes) in {:.2f}s", meta.slide_id,
              meta.width_px, meta.height_px, report.levels_written, report.tiles_written,
              report.bytes_written, report.wall_time.count());
  return report;
}

IngestReport ingest(const IngestJob& job, const PyramidStore& store) {
  validate_ingest_options(job.options);
  auto source = open_raster(job.source_path);
  return ingest(*source, job.options, store);
}

}  // namespace slidestream
