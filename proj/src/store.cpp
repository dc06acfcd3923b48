#include "slidestream/store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "slidestream/error.hpp"

namespace slidestream {

namespace fs = std::filesystem;

bool is_valid_slide_id(std::string_view id) noexcept {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
}

void validate_slide_id(std::string_view id) {
  if (!is_valid_slide_id(id)) {
    throw Error(Errc::validation,
                fmt::format("slide id '{}' must match [a-z0-9_-]{{1,64}}", id));
  }
}

std::string to_meta_document(const SlideMetadata& meta) {
  std::string mpp;
  if (meta.mpp) mpp = fmt::format("{}", *meta.mpp);
  return fmt::format(
      "slide_id={}\nwidth_px={}\nheight_px={}\ntile_size={}\nmax_level={}\nmpp={}\n"
      "channels={}\ncodec={}\n",
      meta.slide_id, meta.width_px, meta.height_px, meta.tile_size, meta.max_level, mpp,
      meta.channels, codec_name(meta.codec));
}

namespace {

template <class T>
T parse_number(const std::map<std::string, std::string, std::less<>>& kv, std::string_view key,
               std::string_view slide_id) {
  const auto it = kv.find(key);
  if (it == kv.end()) {
    throw Error(Errc::corrupt,
                fmt::format("meta document of slide '{}' lacks '{}'", slide_id, key));
  }
  T value{};
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(Errc::corrupt, fmt::format("meta document of slide '{}' has malformed '{}'",
                                           slide_id, key));
  }
  return value;
}

}  // namespace

SlideMetadata parse_meta_document(std::string_view text, std::string_view slide_id) {
  std::map<std::string, std::string, std::less<>> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::corrupt, fmt::format("meta document of slide '{}' has malformed line '{}'",
                                             slide_id, line));
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  SlideMetadata meta;
  const auto id = kv.find("slide_id");
  if (id == kv.end() || id->second != slide_id) {
    throw Error(Errc::corrupt,
                fmt::format("meta document of slide '{}' has a missing or foreign slide_id",
                            slide_id));
  }
  meta.slide_id = id->second;
  meta.width_px = parse_number<std::int64_t>(kv, "width_px", slide_id);
  meta.height_px = parse_number<std::int64_t>(kv, "height_px", slide_id);
  meta.tile_size = parse_number<int>(kv, "tile_size", slide_id);
  meta.max_level = parse_number<int>(kv, "max_level", slide_id);
  meta.channels = parse_number<int>(kv, "channels", slide_id);
  const auto mpp = kv.find("mpp");
  if (mpp == kv.end()) {
    throw Error(Errc::corrupt, fmt::format("meta document of slide '{}' lacks 'mpp'", slide_id));
  }
  if (!mpp->second.empty()) meta.mpp = parse_number<double>(kv, "mpp", slide_id);
  const auto codec = kv.find("codec");
  if (codec == kv.end() || !parse_codec(codec->second)) {
    throw Error(Errc::corrupt,
                fmt::format("meta document of slide '{}' has a missing or unknown codec", slide_id));
  }
  meta.codec = *parse_codec(codec->second);
  try {
    validate_metadata(meta);
  } catch (const Error& e) {
    throw Error(Errc::corrupt, fmt::format("meta document of slide '{}' is inconsistent: {}",
                                           slide_id, e.what()));
  }
  return meta;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

PyramidStore::PyramidStore(fs::path root) : root_(std::move(root)) {}

fs::path PyramidStore::slide_dir(std::string_view slide_id) const { return root_ / slide_id; }

fs::path PyramidStore::meta_path(const fs::path& slide_dir) { return slide_dir / "meta"; }

fs::path PyramidStore::tile_path(const fs::path& slide_dir, const SlideMetadata& meta, int level,
                                 std::int64_t col, std::int64_t row) {
  return slide_dir / std::to_string(level) /
         fmt::format("{}_{}.{}", col, row, codec_extension(meta.codec));
}

bool PyramidStore::contains(std::string_view slide_id) const {
  return is_valid_slide_id(slide_id) && fs::exists(meta_path(slide_dir(slide_id)));
}

std::vector<std::string> PyramidStore::list_slide_ids() const {
  std::vector<std::string> ids;
  std::error_code ec;
  if (!fs::is_directory(root_, ec)) return ids;
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && is_valid_slide_id(name) && fs::exists(meta_path(entry.path()))) {
      ids.push_back(name);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string PyramidStore::read_meta_document(std::string_view slide_id) const {
  if (!contains(slide_id)) {
    throw Error(Errc::slide_not_found, fmt::format("slide '{}' not found", slide_id));
  }
  std::ifstream in(meta_path(slide_dir(slide_id)), std::ios::binary);
  if (!in) throw Error(Errc::corrupt, fmt::format("meta document of slide '{}' unreadable", slide_id));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SlideMetadata PyramidStore::read_metadata(std::string_view slide_id) const {
  return parse_meta_document(read_meta_document(slide_id), slide_id);
}

std::vector<std::uint8_t> PyramidStore::read_tile(const SlideMetadata& meta,
                                                  const TileAddress& addr) const {
  const fs::path path = tile_path(slide_dir(meta.slide_id), meta, addr.level, addr.col, addr.row);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw Error(Errc::corrupt, fmt::format("tile {}/{}/{}_{} of slide '{}' is missing",
                                           meta.slide_id, addr.level, addr.col, addr.row,
                                           meta.slide_id));
  }
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::uint8_t> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in || size == 0) {
    throw Error(Errc::corrupt, fmt::format("tile {}/{}_{} of slide '{}' is unreadable", addr.level,
                                           addr.col, addr.row, meta.slide_id));
  }
  return bytes;
}

LayoutReport PyramidStore::verify_layout(std::string_view slide_id) const {
  const SlideMetadata meta = read_metadata(slide_id);
  const fs::path dir = slide_dir(slide_id);
  std::set<std::string> expected;
  for (int level = 0; level <= meta.max_level; ++level) {
    const LevelSpec spec = level_spec(meta, level);
    for (std::int64_t row = 0; row < spec.rows; ++row) {
      for (std::int64_t col = 0; col < spec.cols; ++col) {
        expected.insert(fs::relative(tile_path(dir, meta, level, col, row), dir).generic_string());
      }
    }
  }
  LayoutReport report;
  report.expected_tiles = expected.size();
  std::set<std::string> present;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == "meta") continue;
    present.insert(rel);
  }
  std::set_difference(expected.begin(), expected.end(), present.begin(), present.end(),
                      std::back_inserter(report.missing));
  std::set_difference(present.begin(), present.end(), expected.begin(), expected.end(),
                      std::back_inserter(report.extra));
  return report;
}

}  // namespace slidestream
