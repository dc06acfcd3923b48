#include "slidestream/pyramid.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "slidestream/error.hpp"

namespace slidestream {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

void require_level(const SlideMetadata& meta, int level) {
  if (level < 0 || level > meta.max_level) {
    throw Error(Errc::level_out_of_range,
                fmt::format("level {} outside [0, {}] for slide '{}'", level, meta.max_level,
                            meta.slide_id));
  }
}

}  // namespace

std::string_view codec_name(TileCodec codec) noexcept {
  return codec == TileCodec::png ? "png" : "jpeg";
}

std::string_view codec_extension(TileCodec codec) noexcept {
  return codec == TileCodec::png ? "png" : "jpg";
}

std::string_view codec_mime(TileCodec codec) noexcept {
  return codec == TileCodec::png ? "image/png" : "image/jpeg";
}

std::optional<TileCodec> parse_codec(std::string_view name) noexcept {
  if (name == "png") return TileCodec::png;
  if (name == "jpeg" || name == "jpg") return TileCodec::jpeg;
  return std::nullopt;
}

int compute_max_level(std::int64_t width_px, std::int64_t height_px) {
  if (width_px < 1 || height_px < 1) {
    throw Error(Errc::validation,
                fmt::format("slide dimensions must be positive, got {}x{}", width_px, height_px));
  }
  const std::int64_t longest = std::max(width_px, height_px);
  int level = 0;
  while ((std::int64_t{1} << level) < longest) ++level;
  return level;
}

void validate_metadata(const SlideMetadata& meta) {
  if (meta.width_px < 1 || meta.height_px < 1) {
    throw Error(Errc::validation, fmt::format("slide '{}' has non-positive dimensions {}x{}",
                                              meta.slide_id, meta.width_px, meta.height_px));
  }
  if (meta.tile_size < 1) {
    throw Error(Errc::validation,
                fmt::format("slide '{}' has tile_size {}", meta.slide_id, meta.tile_size));
  }
  if (meta.mpp && !(*meta.mpp > 0.0 && std::isfinite(*meta.mpp))) {
    throw Error(Errc::validation, fmt::format("slide '{}' has non-positive mpp", meta.slide_id));
  }
  if (meta.max_level != compute_max_level(meta.width_px, meta.height_px)) {
    throw Error(Errc::validation,
                fmt::format("slide '{}' has max_level {} but its dimensions imply {}",
                            meta.slide_id, meta.max_level,
                            compute_max_level(meta.width_px, meta.height_px)));
  }
  if (meta.channels != 3) {
    throw Error(Errc::validation,
                fmt::format("slide '{}' has {} channels, only RGB is supported", meta.slide_id,
                            meta.channels));
  }
}

SlideMetadata make_metadata(std::string slide_id, std::int64_t width_px, std::int64_t height_px,
                            int tile_size, std::optional<double> mpp, TileCodec codec) {
  SlideMetadata meta;
  meta.slide_id = std::move(slide_id);
  meta.width_px = width_px;
  meta.height_px = height_px;
  meta.tile_size = tile_size;
  meta.mpp = mpp;
  meta.codec = codec;
  meta.max_level = compute_max_level(width_px, height_px);
  validate_metadata(meta);
  return meta;
}

LevelSpec level_spec(const SlideMetadata& meta, int level) {
  require_level(meta, level);
  LevelSpec spec;
  spec.level = level;
  spec.downsample = std::int64_t{1} << (meta.max_level - level);
  spec.width_px = ceil_div(meta.width_px, spec.downsample);
  spec.height_px = ceil_div(meta.height_px, spec.downsample);
  spec.cols = ceil_div(spec.width_px, meta.tile_size);
  spec.rows = ceil_div(spec.height_px, meta.tile_size);
  return spec;
}

void validate_address(const SlideMetadata& meta, const TileAddress& addr) {
  const LevelSpec spec = level_spec(meta, addr.level);
  if (addr.col < 0 || addr.col >= spec.cols || addr.row < 0 || addr.row >= spec.rows) {
    throw Error(Errc::tile_out_of_range,
                fmt::format("tile ({}, {}) outside the {}x{} grid of level {}", addr.col,
                            addr.row, spec.cols, spec.rows, addr.level));
  }
}

Region tile_bounds(const SlideMetadata& meta, const TileAddress& addr) {
  validate_address(meta, addr);
  const LevelSpec spec = level_spec(meta, addr.level);
  Region r;
  r.level = addr.level;
  r.x = addr.col * meta.tile_size;
  r.y = addr.row * meta.tile_size;
  r.width = std::min<std::int64_t>(meta.tile_size, spec.width_px - r.x);
  r.height = std::min<std::int64_t>(meta.tile_size, spec.height_px - r.y);
  return r;
}

template <class Tag>
LevelRect<Tag> clamp_to_level(const SlideMetadata& meta, const LevelRect<Tag>& rect) {
  const LevelSpec spec = level_spec(meta, rect.level);
  if (rect.width <= 0 || rect.height <= 0) {
    throw Error(Errc::validation,
                fmt::format("rectangle extent must be positive, got {}x{}", rect.width,
                            rect.height));
  }
  const std::int64_t x0 = std::max<std::int64_t>(rect.x, 0);
  const std::int64_t y0 = std::max<std::int64_t>(rect.y, 0);
  const std::int64_t x1 = std::min(rect.right(), spec.width_px);
  const std::int64_t y1 = std::min(rect.bottom(), spec.height_px);
  if (x1 <= x0 || y1 <= y0) {
    throw Error(Errc::out_of_bounds,
                fmt::format("rectangle ({}, {}, {}x{}) lies outside level {} ({}x{})", rect.x,
                            rect.y, rect.width, rect.height, rect.level, spec.width_px,
                            spec.height_px));
  }
  return {rect.level, x0, y0, x1 - x0, y1 - y0};
}

template Viewport clamp_to_level(const SlideMetadata&, const Viewport&);
template Region clamp_to_level(const SlideMetadata&, const Region&);

TileRange tile_range(const SlideMetadata& meta, const Viewport& vp) {
  const Viewport c = clamp_to_level(meta, vp);
  const std::int64_t ts = meta.tile_size;
  return {c.level, c.x / ts, (c.right() - 1) / ts + 1, c.y / ts, (c.bottom() - 1) / ts + 1};
}

std::vector<TileAddress> tiles_in_range(const SlideMetadata& meta, const TileRange& range) {
  std::vector<TileAddress> tiles;
  tiles.reserve(static_cast<std::size_t>(std::max<std::int64_t>(range.count(), 0)));
  for (std::int64_t row = range.row_begin; row < range.row_end; ++row) {
    for (std::int64_t col = range.col_begin; col < range.col_end; ++col) {
      tiles.push_back({meta.slide_id, range.level, col, row});
    }
  }
  return tiles;
}

std::vector<TileAddress> tiles_for_viewport(const SlideMetadata& meta, const Viewport& vp) {
  return tiles_in_range(meta, tile_range(meta, vp));
}

TileRange expand_range(const SlideMetadata& meta, const TileRange& range, int ring) {
  if (ring < 0) throw Error(Errc::validation, "prefetch ring must be non-negative");
  const LevelSpec spec = level_spec(meta, range.level);
  return {range.level,
          std::max<std::int64_t>(range.col_begin - ring, 0),
          std::min<std::int64_t>(range.col_end + ring, spec.cols),
          std::max<std::int64_t>(range.row_begin - ring, 0),
          std::min<std::int64_t>(range.row_end + ring, spec.rows)};
}

int select_level(const SlideMetadata& meta, double requested_downsample) {
  if (!(requested_downsample > 0.0) || !std::isfinite(requested_downsample)) {
    throw Error(Errc::domain, fmt::format("requested downsample must be positive and finite, got {}",
                                          requested_downsample));
  }
  const double t = std::log2(requested_downsample);
  if (t <= 0.0) return meta.max_level;
  if (t >= meta.max_level) return 0;
  const double whole = std::floor(t);
  const double frac = t - whole;
  const int exponent = static_cast<int>(whole) + (frac <= 0.5 + kLevelTieTolerance ? 0 : 1);
  return meta.max_level - std::clamp(exponent, 0, meta.max_level);
}

PhysicalExtent viewport_physical_extent(const SlideMetadata& meta, const Viewport& vp) {
  if (!meta.mpp) {
    throw Error(Errc::unsupported,
                fmt::format("slide '{}' has no microns-per-pixel calibration", meta.slide_id));
  }
  const double scale = *meta.mpp * static_cast<double>(level_spec(meta, vp.level).downsample);
  return {static_cast<double>(vp.width) * scale, static_cast<double>(vp.height) * scale};
}

}  // namespace slidestream
