#pragma once

#include <cstdint>
#include <memory>
#include <span>

#include "slidestream/image.hpp"
#include "slidestream/raster_source.hpp"

namespace slidestream {

/// Deterministic procedural stand-in for a stained tissue scan: seeded
/// multi-scale value noise thresholded into tissue blobs on a light
/// background, with a seed-dependent stain palette. Any pixel can be
/// produced independently, so arbitrarily large slides stream in constant
/// memory.
class SyntheticSlide {
 public:
  SyntheticSlide(std::int64_t width, std::int64_t height, std::uint64_t seed);

  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  std::uint64_t seed() const { return seed_; }

  /// Packed RGB for row `y`, columns [x0, x0 + out.size() / 3).
  void render_row(std::int64_t y, std::int64_t x0, std::span<std::uint8_t> out) const;

  Raster render(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const;
  Raster render_all() const { return render(0, 0, width_, height_); }

  std::unique_ptr<RasterSource> source() const;

 private:
  struct Rgb {
    float r, g, b;
  };

  std::int64_t width_;
  std::int64_t height_;
  std::uint64_t seed_;
  Rgb background_;
  Rgb stroma_;
  Rgb nuclei_;
};

}  // namespace slidestream
