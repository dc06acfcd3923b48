#pragma once

// Deep-zoom pyramid geometry. Level 0 is the coarsest level (longest side
// of 1 px); level max_level is full resolution. Every level halves the one
// above it with ceil-division, and every level is cut into a grid of
// tile_size x tile_size tiles whose right and bottom edges are clipped.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace slidestream {

enum class TileCodec { png, jpeg };

std::string_view codec_name(TileCodec codec) noexcept;
std::string_view codec_extension(TileCodec codec) noexcept;
std::string_view codec_mime(TileCodec codec) noexcept;
std::optional<TileCodec> parse_codec(std::string_view name) noexcept;

inline constexpr int kDefaultTileSize = 256;

struct SlideMetadata {
  std::string slide_id;
  std::int64_t width_px = 0;
  std::int64_t height_px = 0;
  std::optional<double> mpp;
  int tile_size = kDefaultTileSize;
  int max_level = 0;
  int channels = 3;
  TileCodec codec = TileCodec::png;

  friend bool operator==(const SlideMetadata&, const SlideMetadata&) = default;
};

/// Smallest L with 2^L >= max(width, height).
int compute_max_level(std::int64_t width_px, std::int64_t height_px);

/// Builds validated metadata with max_level derived from the dimensions.
SlideMetadata make_metadata(std::string slide_id, std::int64_t width_px,
                            std::int64_t height_px, int tile_size,
                            std::optional<double> mpp = std::nullopt,
                            TileCodec codec = TileCodec::png);

/// Throws Errc::validation when the metadata breaks an invariant.
void validate_metadata(const SlideMetadata& meta);

struct LevelSpec {
  int level = 0;
  std::int64_t width_px = 0;
  std::int64_t height_px = 0;
  std::int64_t downsample = 1;
  std::int64_t cols = 0;
  std::int64_t rows = 0;

  std::int64_t tile_count() const { return cols * rows; }
  friend bool operator==(const LevelSpec&, const LevelSpec&) = default;
};

struct TileAddress {
  std::string slide_id;
  int level = 0;
  std::int64_t col = 0;
  std::int64_t row = 0;

  friend bool operator==(const TileAddress&, const TileAddress&) = default;
  friend auto operator<=>(const TileAddress&, const TileAddress&) = default;
};

/// Rectangle in the pixel space of one pyramid level. The tag keeps client
/// navigation state (Viewport) and server crop requests (Region) apart.
template <class Tag>
struct LevelRect {
  int level = 0;
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;

  std::int64_t right() const { return x + width; }
  std::int64_t bottom() const { return y + height; }
  std::int64_t area() const { return width * height; }

  friend bool operator==(const LevelRect&, const LevelRect&) = default;
};

struct ViewportTag {};
struct RegionTag {};
using Viewport = LevelRect<ViewportTag>;
using Region = LevelRect<RegionTag>;

template <class To, class From>
LevelRect<To> rect_cast(const LevelRect<From>& r) {
  return {r.level, r.x, r.y, r.width, r.height};
}

/// Inclusive-exclusive tile index range [col_begin, col_end) x [row_begin, row_end).
struct TileRange {
  int level = 0;
  std::int64_t col_begin = 0;
  std::int64_t col_end = 0;
  std::int64_t row_begin = 0;
  std::int64_t row_end = 0;

  std::int64_t count() const { return (col_end - col_begin) * (row_end - row_begin); }
  friend bool operator==(const TileRange&, const TileRange&) = default;
};

struct PhysicalExtent {
  double width_um = 0.0;
  double height_um = 0.0;
};

LevelSpec level_spec(const SlideMetadata& meta, int level);

/// Throws Errc::level_out_of_range or Errc::tile_out_of_range.
void validate_address(const SlideMetadata& meta, const TileAddress& addr);

Region tile_bounds(const SlideMetadata& meta, const TileAddress& addr);

/// Intersects `rect` with its level's bounds. Fully outside is
/// Errc::out_of_bounds; a non-positive extent is Errc::validation.
template <class Tag>
LevelRect<Tag> clamp_to_level(const SlideMetadata& meta, const LevelRect<Tag>& rect);

TileRange tile_range(const SlideMetadata& meta, const Viewport& vp);

/// Tiles intersecting the clamped viewport, row-major.
std::vector<TileAddress> tiles_for_viewport(const SlideMetadata& meta, const Viewport& vp);

/// `range` grown by `ring` tiles on every side and clipped to the grid.
TileRange expand_range(const SlideMetadata& meta, const TileRange& range, int ring);

std::vector<TileAddress> tiles_in_range(const SlideMetadata& meta, const TileRange& range);

/// Requests whose log2 distance to the half-way point between two levels is
/// within this tolerance are ties and resolve to the higher-resolution level.
inline constexpr double kLevelTieTolerance = 0.005;

int select_level(const SlideMetadata& meta, double requested_downsample);

PhysicalExtent viewport_physical_extent(const SlideMetadata& meta, const Viewport& vp);

}  // namespace slidestream
