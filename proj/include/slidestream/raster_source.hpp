#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>

#include "slidestream/image.hpp"

namespace slidestream {

/// Sequential top-to-bottom reader of an RGB image. Ingest pulls rows in
/// stripes so sources never have to be resident in memory.
class RasterSource {
 public:
  virtual ~RasterSource() = default;

  virtual std::int64_t width() const = 0;
  virtual std::int64_t height() const = 0;

  /// Reads the next `count` rows as packed RGB into `out`
  /// (size >= count * width * 3).
  virtual void read_rows(std::span<std::uint8_t> out, std::int64_t count) = 0;
};

/// Opens a PNG, JPEG or binary PPM (P6) file, sniffed from its signature.
/// Alpha is dropped and grayscale expanded to RGB.
std::unique_ptr<RasterSource> open_raster(const std::filesystem::path& path);

/// Source over an in-memory RGB raster.
class MemoryRasterSource final : public RasterSource {
 public:
  explicit MemoryRasterSource(const Raster& raster);
  MemoryRasterSource(Raster&&) = delete;  // holds a reference

  std::int64_t width() const override { return raster_.width; }
  std::int64_t height() const override { return raster_.height; }
  void read_rows(std::span<std::uint8_t> out, std::int64_t count) override;

 private:
  const Raster& raster_;
  std::int64_t next_row_ = 0;
};

/// Whole-image helpers built on `open_raster`.
Raster read_raster_file(const std::filesystem::path& path);
void write_raster_file(const std::filesystem::path& path, const Raster& raster);

}  // namespace slidestream
