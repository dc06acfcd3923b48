#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "slidestream/pyramid.hpp"

namespace slidestream {

/// Interleaved 8-bit raster, row-major, no padding.
struct Raster {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Raster() = default;
  Raster(std::int64_t w, std::int64_t h, int c = 3, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w * h * c), fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t stride() const { return static_cast<std::size_t>(width * channels); }

  std::uint8_t* row(std::int64_t y) { return pixels.data() + y * stride(); }
  const std::uint8_t* row(std::int64_t y) const { return pixels.data() + y * stride(); }

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Box-filter 2x reduction. Each output pixel is the per-channel mean of its
/// 2x2 source block (1x2, 2x1 or 1x1 at odd edges), rounded half up:
/// (sum + count / 2) / count.
Raster downsample_2x(const Raster& src);

/// One output row of `downsample_2x` from a source row pair. `bottom` is
/// empty when `top` is the last row of an odd-height image.
void downsample_row_pair(std::span<const std::uint8_t> top, std::span<const std::uint8_t> bottom,
                         std::int64_t width, int channels, std::span<std::uint8_t> out);

/// Copy of the sub-rectangle [x, x+w) x [y, y+h); must lie inside `src`.
Raster crop(const Raster& src, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h);

/// Writes `src` into `dst` with its top-left corner at (x, y), clipped to `dst`.
void paste(Raster& dst, const Raster& src, std::int64_t x, std::int64_t y);

std::vector<std::uint8_t> encode_image(const Raster& img, TileCodec codec, int jpeg_quality = 90);

/// Decodes PNG or JPEG bytes (sniffed from the signature) into RGB.
Raster decode_image(std::span<const std::uint8_t> bytes);

}  // namespace slidestream
