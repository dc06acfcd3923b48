#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slidestream/pyramid.hpp"

namespace slidestream {

/// Throws Errc::validation unless `id` matches [a-z0-9_-]{1,64}.
void validate_slide_id(std::string_view id);
bool is_valid_slide_id(std::string_view id) noexcept;

/// `key=value` lines in a fixed key order; `mpp=` is empty when unknown.
std::string to_meta_document(const SlideMetadata& meta);

/// Throws Errc::corrupt naming `slide_id` on any malformed or missing field.
SlideMetadata parse_meta_document(std::string_view text, std::string_view slide_id);

/// Hex SHA-256 of `bytes`.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

struct LayoutReport {
  std::size_t expected_tiles = 0;
  std::vector<std::string> missing;  // relative paths
  std::vector<std::string> extra;

  bool ok() const { return missing.empty() && extra.empty(); }
};

/// On-disk pyramid layout:
///   <root>/<slide_id>/meta
///   <root>/<slide_id>/<level>/<col>_<row>.<ext>
class PyramidStore {
 public:
  explicit PyramidStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path slide_dir(std::string_view slide_id) const;
  static std::filesystem::path meta_path(const std::filesystem::path& slide_dir);
  static std::filesystem::path tile_path(const std::filesystem::path& slide_dir,
                                         const SlideMetadata& meta, int level, std::int64_t col,
                                         std::int64_t row);

  bool contains(std::string_view slide_id) const;

  /// Sorted ids of every directory that holds a meta document.
  std::vector<std::string> list_slide_ids() const;

  /// Throws Errc::slide_not_found or Errc::corrupt.
  SlideMetadata read_metadata(std::string_view slide_id) const;
  std::string read_meta_document(std::string_view slide_id) const;

  /// Tile bytes; a missing or unreadable file of a known slide is Errc::corrupt.
  std::vector<std::uint8_t> read_tile(const SlideMetadata& meta, const TileAddress& addr) const;

  LayoutReport verify_layout(std::string_view slide_id) const;

 private:
  std::filesystem::path root_;
};

}  // namespace slidestream
