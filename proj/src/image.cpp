#include "slidestream/image.hpp"

#include <algorithm>
#include <cstring>

#include <fmt/format.h>

#include "slidestream/error.hpp"

namespace slidestream {

void downsample_row_pair(std::span<const std::uint8_t> top, std::span<const std::uint8_t> bottom,
                         std::int64_t width, int channels, std::span<std::uint8_t> out) {
  const std::int64_t out_w = (width + 1) / 2;
  const bool two_rows = !bottom.empty();
  for (std::int64_t ox = 0; ox < out_w; ++ox) {
    const std::int64_t x0 = 2 * ox;
    const bool two_cols = x0 + 1 < width;
    const unsigned count = (two_cols ? 2u : 1u) * (two_rows ? 2u : 1u);
    for (int c = 0; c < channels; ++c) {
      const std::size_t i0 = static_cast<std::size_t>(x0 * channels + c);
      const std::size_t i1 = i0 + static_cast<std::size_t>(channels);
      unsigned sum = top[i0];
      if (two_cols) sum += top[i1];
      if (two_rows) {
        sum += bottom[i0];
        if (two_cols) sum += bottom[i1];
      }
      out[static_cast<std::size_t>(ox * channels + c)] =
          static_cast<std::uint8_t>((sum + count / 2) / count);
    }
  }
}

Raster downsample_2x(const Raster& src) {
  if (src.empty()) throw Error(Errc::validation, "cannot downsample an empty raster");
  Raster out((src.width + 1) / 2, (src.height + 1) / 2, src.channels);
  for (std::int64_t oy = 0; oy < out.height; ++oy) {
    const std::int64_t y0 = 2 * oy;
    std::span<const std::uint8_t> top(src.row(y0), src.stride());
    std::span<const std::uint8_t> bottom;
    if (y0 + 1 < src.height) bottom = {src.row(y0 + 1), src.stride()};
    downsample_row_pair(top, bottom, src.width, src.channels, {out.row(oy), out.stride()});
  }
  return out;
}

Raster crop(const Raster& src, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > src.width || y + h > src.height) {
    throw Error(Errc::out_of_bounds,
                fmt::format("crop ({}, {}, {}x{}) outside {}x{} raster", x, y, w, h, src.width,
                            src.height));
  }
  Raster out(w, h, src.channels);
  const std::size_t span = static_cast<std::size_t>(w * src.channels);
  for (std::int64_t r = 0; r < h; ++r) {
    std::memcpy(out.row(r), src.row(y + r) + x * src.channels, span);
  }
  return out;
}

void paste(Raster& dst, const Raster& src, std::int64_t x, std::int64_t y) {
  const std::int64_t x0 = std::max<std::int64_t>(x, 0);
  const std::int64_t y0 = std::max<std::int64_t>(y, 0);
  const std::int64_t x1 = std::min(x + src.width, dst.width);
  const std::int64_t y1 = std::min(y + src.height, dst.height);
  if (x1 <= x0 || y1 <= y0) return;
  const std::size_t span = static_cast<std::size_t>((x1 - x0) * dst.channels);
  for (std::int64_t r = y0; r < y1; ++r) {
    std::memcpy(dst.row(r) + x0 * dst.channels, src.row(r - y) + (x0 - x) * src.channels, span);
  }
}

}  // namespace slidestream
