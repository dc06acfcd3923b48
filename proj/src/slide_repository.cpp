#include "slidestream/slide_repository.hpp"

#include <fmt/format.h>

#include "slidestream/error.hpp"

namespace slidestream {

void validate_cache_config(const CacheConfig& cfg) {
  if (cfg.tile_cache_capacity_bytes == 0) {
    throw Error(Errc::config, "tile_cache_capacity_bytes must be positive");
  }
  if (cfg.slide_cache_capacity_entries == 0) {
    throw Error(Errc::config, "slide_cache_capacity_entries must be positive");
  }
}

std::size_t TileAddressHash::operator()(const TileAddress& a) const noexcept {
  std::size_t h = std::hash<std::string>{}(a.slide_id);
  auto combine = [&h](std::uint64_t v) {
    h ^= std::hash<std::uint64_t>{}(v) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  };
  combine(static_cast<std::uint64_t>(a.level));
  combine(static_cast<std::uint64_t>(a.col));
  combine(static_cast<std::uint64_t>(a.row));
  return h;
}

SlideRepository::SlideRepository(PyramidStore store, CacheConfig cfg)
    : store_(std::move(store)),
      cfg_(cfg),
      slides_(cfg.slide_cache_capacity_entries, [](const auto&) { return std::size_t{1}; }),
      tiles_(cfg.tile_cache_capacity_bytes,
             [](const std::shared_ptr<const EncodedTile>& t) { return t->bytes.size(); }) {
  validate_cache_config(cfg);
}

std::shared_ptr<const SlideHandle> SlideRepository::open_slide(std::string_view slide_id) {
  const std::string key(slide_id);
  if (auto cached = slides_.get(key)) return *cached;
  if (!is_valid_slide_id(slide_id) || !store_.contains(slide_id)) {
    throw Error(Errc::slide_not_found, fmt::format("slide '{}' not found", slide_id));
  }
  const std::string doc = store_.read_meta_document(slide_id);
  auto handle = std::make_shared<SlideHandle>();
  handle->meta = parse_meta_document(doc, slide_id);
  handle->meta_digest = sha256_hex(doc);
  handle->dir = store_.slide_dir(slide_id);
  slides_.put(key, handle);
  return handle;
}

std::shared_ptr<const EncodedTile> SlideRepository::load_tile(const SlideHandle& slide,
                                                              const TileAddress& addr) {
  auto tile = std::make_shared<EncodedTile>();
  tile->bytes = store_.read_tile(slide.meta, addr);
  tile->etag = "\"" + sha256_hex(tile->bytes).substr(0, 32) + "\"";
  std::shared_ptr<const EncodedTile> shared = std::move(tile);
  tiles_.put(addr, shared);
  return shared;
}

TilePayload SlideRepository::get_tile(const TileAddress& addr) {
  const auto slide = open_slide(addr.slide_id);
  validate_address(slide->meta, addr);
  TilePayload out;
  out.codec = slide->meta.codec;
  if (auto cached = tiles_.get(addr)) {
    out.tile = *cached;
    out.cache_hit = true;
    return out;
  }
  out.tile = load_tile(*slide, addr);
  return out;
}

bool SlideRepository::warm_tile(const TileAddress& addr) {
  const auto slide = open_slide(addr.slide_id);
  validate_address(slide->meta, addr);
  if (tiles_.contains(addr)) return false;
  load_tile(*slide, addr);
  return true;
}

Raster SlideRepository::decode_tile(const TileAddress& addr) {
  const TilePayload payload = get_tile(addr);
  return decode_image(payload.tile->bytes);
}

Raster SlideRepository::render_region(std::string_view slide_id, const Region& region) {
  const auto slide = open_slide(slide_id);
  const Region clamped = clamp_to_level(slide->meta, region);
  Raster out(clamped.width, clamped.height, 3);
  for (const TileAddress& addr :
       tiles_for_viewport(slide->meta, rect_cast<ViewportTag>(clamped))) {
    const Region bounds = tile_bounds(slide->meta, addr);
    const Raster tile = decode_tile(addr);
    if (tile.width != bounds.width || tile.height != bounds.height) {
      throw Error(Errc::corrupt, fmt::format("tile {}/{}_{} of slide '{}' decodes to {}x{}, expected {}x{}",
                                             addr.level, addr.col, addr.row, slide_id, tile.width,
                                             tile.height, bounds.width, bounds.height));
    }
    paste(out, tile, bounds.x - clamped.x, bounds.y - clamped.y);
  }
  return out;
}

Raster SlideRepository::render_level(std::string_view slide_id, int level) {
  const auto slide = open_slide(slide_id);
  const LevelSpec spec = level_spec(slide->meta, level);
  return render_region(slide_id, Region{level, 0, 0, spec.width_px, spec.height_px});
}

void SlideRepository::forget_slide(std::string_view slide_id) { slides_.erase(std::string(slide_id)); }

CacheSnapshot SlideRepository::cache_stats() const { return {tiles_.stats(), slides_.stats()}; }

}  // namespace slidestream
