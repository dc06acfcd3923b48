#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "slidestream/image.hpp"
#include "slidestream/lru_cache.hpp"
#include "slidestream/pyramid.hpp"
#include "slidestream/store.hpp"

namespace slidestream {

struct CacheConfig {
  std::size_t tile_cache_capacity_bytes = std::size_t{512} << 20;
  std::size_t slide_cache_capacity_entries = 16;
};

void validate_cache_config(const CacheConfig& cfg);

/// An opened slide: metadata plus the digest of its meta document.
struct SlideHandle {
  SlideMetadata meta;
  std::string meta_digest;
  std::filesystem::path dir;
};

/// Encoded tile as stored on disk and served over the wire.
struct EncodedTile {
  std::vector<std::uint8_t> bytes;
  std::string etag;  // quoted, derived from the payload digest
};

struct TilePayload {
  std::shared_ptr<const EncodedTile> tile;
  TileCodec codec = TileCodec::png;
  bool cache_hit = false;
};

struct CacheSnapshot {
  CacheStats tiles;
  CacheStats slides;
};

struct TileAddressHash {
  std::size_t operator()(const TileAddress& a) const noexcept;
};

/// Store access behind two LRU layers: opened slides (entry-bounded) and
/// encoded tiles (byte-bounded). Safe for concurrent use. Concurrent misses
/// on one key may both read the file; the last insert wins.
class SlideRepository {
 public:
  explicit SlideRepository(PyramidStore store, CacheConfig cfg = {});

  const PyramidStore& store() const { return store_; }
  const CacheConfig& config() const { return cfg_; }

  /// Errc::slide_not_found or Errc::corrupt.
  std::shared_ptr<const SlideHandle> open_slide(std::string_view slide_id);

  /// Validated, cached tile fetch. Errc::slide_not_found for unknown slides,
  /// Errc::level_out_of_range / Errc::tile_out_of_range for bad addresses,
  /// Errc::corrupt when the file of a valid address is missing.
  TilePayload get_tile(const TileAddress& addr);

  /// Loads `addr` into the tile cache without touching hit/miss counters.
  /// Returns false when it was already cached.
  bool warm_tile(const TileAddress& addr);

  Raster decode_tile(const TileAddress& addr);

  /// Pixels of the clamped region, stitched from its covering tiles.
  Raster render_region(std::string_view slide_id, const Region& region);

  Raster render_level(std::string_view slide_id, int level);

  /// Drops a slide from the slide cache (its tiles age out normally).
  void forget_slide(std::string_view slide_id);

  CacheSnapshot cache_stats() const;

 private:
  std::shared_ptr<const EncodedTile> load_tile(const SlideHandle& slide, const TileAddress& addr);

  PyramidStore store_;
  CacheConfig cfg_;
  LruCache<std::string, std::shared_ptr<const SlideHandle>> slides_;
  LruCache<TileAddress, std::shared_ptr<const EncodedTile>, TileAddressHash> tiles_;
};

}  // namespace slidestream
