#include "slidestream/cbir.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "slidestream/logging.hpp"

namespace slidestream::cbir {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'S', 'S', 'C', 'B', 'I', 'R', 'X', '\n'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T take(std::istream& in, const fs::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw Error(Errc::corrupt, fmt::format("index '{}' is truncated", path.string()));
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in, const fs::path& path) {
  const auto n = take<std::uint16_t>(in, path);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(Errc::corrupt, fmt::format("index '{}' is truncated", path.string()));
  return s;
}

}  // namespace

DescriptorIndex::DescriptorIndex(std::vector<Entry> entries, DescriptorMatrix<double> vectors)
    : entries_(std::move(entries)), vectors_(std::move(vectors)) {
  if (static_cast<Eigen::Index>(entries_.size()) != vectors_.rows()) {
    throw Error(Errc::internal, "index entries and vectors disagree in length");
  }
  // Rows are stored unit-norm so a dot product is the cosine; zero rows stay
  // zero and rows already within 1e-12 of unit norm are kept bit-for-bit.
  for (Eigen::Index i = 0; i < vectors_.rows(); ++i) {
    const double n = vectors_.row(i).norm();
    if (n > 0 && std::abs(n - 1.0) > 1e-12) vectors_.row(i) /= n;
  }
}

std::vector<SearchHit> DescriptorIndex::search(const Descriptor<double>& query,
                                               const SearchConfig& cfg) const {
  if (cfg.k < 1) throw Error(Errc::validation, fmt::format("k must be >= 1, got {}", cfg.k));
  const double qn = query.norm();
  const Eigen::VectorXd scores = qn > 0 ? Eigen::VectorXd(vectors_ * (query / qn))
                                        : Eigen::VectorXd::Zero(vectors_.rows());
  std::vector<std::size_t> order(entries_.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take_n = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take_n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = scores(static_cast<Eigen::Index>(a));
                      const double sb = scores(static_cast<Eigen::Index>(b));
                      if (sa != sb) return sa > sb;
                      return entries_[a].slide_id < entries_[b].slide_id;
                    });
  std::vector<SearchHit> hits;
  hits.reserve(take_n);
  for (std::size_t i = 0; i < take_n; ++i) {
    const std::size_t row = order[i];
    hits.push_back({entries_[row].slide_id,
                    std::clamp(scores(static_cast<Eigen::Index>(row)), -1.0, 1.0)});
  }
  return hits;
}

void DescriptorIndex::save(const fs::path& path) const {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, fmt::format("cannot write index '{}'", tmp.string()));
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, kDescriptorLength);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      put_string(out, entries_[i].slide_id);
      put_string(out, entries_[i].meta_digest);
      for (int d = 0; d < kDescriptorLength; ++d) {
        put<double>(out, vectors_(static_cast<Eigen::Index>(i), d));
      }
    }
    if (!out) throw Error(Errc::io, fmt::format("failed writing index '{}'", tmp.string()));
  }
  fs::rename(tmp, path);
}

DescriptorIndex DescriptorIndex::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::index_required, fmt::format("no index at '{}'", path.string()));
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(Errc::corrupt, fmt::format("'{}' is not a descriptor index", path.string()));
  }
  const auto version = take<std::uint32_t>(in, path);
  const auto dims = take<std::uint32_t>(in, path);
  if (version != kFormatVersion || dims != kDescriptorLength) {
    throw Error(Errc::corrupt, fmt::format("index '{}' has version {} / length {}, expected {} / {}",
                                           path.string(), version, dims, kFormatVersion,
                                           kDescriptorLength));
  }
  const auto count = take<std::uint32_t>(in, path);
  std::vector<Entry> entries;
  DescriptorMatrix<double> vectors(count, kDescriptorLength);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.slide_id = take_string(in, path);
    e.meta_digest = take_string(in, path);
    for (int d = 0; d < kDescriptorLength; ++d) vectors(i, d) = take<double>(in, path);
    entries.push_back(std::move(e));
  }
  return DescriptorIndex(std::move(entries), std::move(vectors));
}

int thumbnail_level(const SlideMetadata& meta) {
  const double longest = static_cast<double>(std::max(meta.width_px, meta.height_px));
  const double downsample = std::max(1.0, longest / static_cast<double>(kThumbnailLongestSide));
  return select_level(meta, downsample);
}

Descriptor<double> whole_slide_descriptor(SlideRepository& repo, std::string_view slide_id) {
  const auto slide = repo.open_slide(slide_id);
  return compute_descriptor<double>(repo.render_level(slide_id, thumbnail_level(slide->meta)));
}

DescriptorIndex build_index(SlideRepository& repo) {
  const auto ids = repo.store().list_slide_ids();
  std::vector<DescriptorIndex::Entry> entries;
  std::vector<Descriptor<double>> rows;
  for (const auto& id : ids) {
    try {
      const auto slide = repo.open_slide(id);
      rows.push_back(whole_slide_descriptor(repo, id));
      entries.push_back({id, slide->meta_digest});
    } catch (const Error& e) {
      if (e.code() != Errc::corrupt) throw;
      log()->warn("skipping slide '{}' while indexing: {}", id, e.what());
    }
  }
  if (entries.empty()) throw Error(Errc::validation, "cannot index an empty store");
  DescriptorMatrix<double> vectors(static_cast<Eigen::Index>(rows.size()), kDescriptorLength);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    vectors.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return DescriptorIndex(std::move(entries), std::move(vectors));
}

std::vector<std::string> stale_slides(const DescriptorIndex& index, SlideRepository& repo) {
  std::vector<std::string> stale;
  const auto ids = repo.store().list_slide_ids();
  std::vector<std::string> indexed;
  for (const auto& e : index.entries()) {
    indexed.push_back(e.slide_id);
    if (!std::binary_search(ids.begin(), ids.end(), e.slide_id)) {
      stale.push_back(e.slide_id);
      continue;
    }
    try {
      const std::string digest = sha256_hex(repo.store().read_meta_document(e.slide_id));
      if (digest != e.meta_digest) stale.push_back(e.slide_id);
    } catch (const Error&) {
      stale.push_back(e.slide_id);
    }
  }
  std::sort(indexed.begin(), indexed.end());
  std::set_difference(ids.begin(), ids.end(), indexed.begin(), indexed.end(),
                      std::back_inserter(stale));
  std::sort(stale.begin(), stale.end());
  return stale;
}

CbirService::CbirService(SlideRepository& repo, fs::path index_path, bool auto_refresh)
    : repo_(repo), index_path_(std::move(index_path)), auto_refresh_(auto_refresh) {}

std::shared_ptr<const DescriptorIndex> CbirService::rebuild() {
  auto fresh = std::make_shared<const DescriptorIndex>(build_index(repo_));
  fresh->save(index_path_);
  std::lock_guard lock(mutex_);
  index_ = fresh;
  log()->info("descriptor index rebuilt with {} slides", fresh->size());
  return fresh;
}

std::shared_ptr<const DescriptorIndex> CbirService::index() {
  {
    std::lock_guard lock(mutex_);
    if (index_) return index_;
  }
  if (!fs::exists(index_path_)) {
    if (auto_refresh_) return rebuild();
    throw Error(Errc::index_required,
                "no descriptor index has been built for this store (run the index command)");
  }
  auto loaded = std::make_shared<const DescriptorIndex>(DescriptorIndex::load(index_path_));
  std::lock_guard lock(mutex_);
  if (!index_) index_ = loaded;
  return index_;
}

SearchResponse CbirService::search_slide(std::string_view slide_id,
                                         const std::optional<Region>& region,
                                         const SearchConfig& cfg) {
  if (cfg.k < 1) throw Error(Errc::validation, fmt::format("k must be >= 1, got {}", cfg.k));
  SearchResponse response;
  response.k = cfg.k;
  auto idx = index();
  auto stale = stale_slides(*idx, repo_);
  if (!stale.empty() && auto_refresh_) {
    idx = rebuild();
    stale = stale_slides(*idx, repo_);
  }
  if (!stale.empty()) {
    const std::string msg = fmt::format("descriptor index is stale for {} slide(s): {}",
                                        stale.size(), fmt::join(stale, ", "));
    log()->warn("{}", msg);
    response.warnings.push_back(msg);
  }
  CaseDescriptor query;
  query.slide_id = std::string(slide_id);
  if (region) {
    const auto slide = repo_.open_slide(slide_id);
    query.source_region = clamp_to_level(slide->meta, *region);
    query.vector = compute_descriptor<double>(repo_.render_region(slide_id, *region));
  } else {
    query.vector = whole_slide_descriptor(repo_, slide_id);
  }
  response.result.hits = idx->search(query.vector, cfg);
  response.result.query = std::move(query);
  return response;
}

}  // namespace slidestream::cbir
