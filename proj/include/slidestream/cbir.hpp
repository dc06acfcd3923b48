#pragma once

// Content-based retrieval over a local case library: a fixed-length colour
// and layout descriptor per slide (or region) and exact cosine k-NN.

#include <array>
#include <cmath>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "slidestream/error.hpp"
#include "slidestream/image.hpp"
#include "slidestream/pyramid.hpp"
#include "slidestream/slide_repository.hpp"

namespace slidestream::cbir {

inline constexpr int kHistogramBins = 8;
inline constexpr int kHistogramDims = 3 * kHistogramBins;
inline constexpr int kThumbnailSide = 8;
inline constexpr int kThumbnailDims = kThumbnailSide * kThumbnailSide;
inline constexpr int kDescriptorLength = kHistogramDims + kThumbnailDims;  // 88
inline constexpr int kDefaultK = 5;
inline constexpr std::int64_t kThumbnailLongestSide = 1024;

template <typename Scalar>
using Descriptor = Eigen::Matrix<Scalar, kDescriptorLength, 1>;

template <typename Scalar>
using DescriptorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, kDescriptorLength, Eigen::RowMajor>;

namespace detail {

/// Coverage of output cell j by source pixel i when `source` pixels are
/// spread evenly over `cells` cells: pairs (cell, overlap length in cell
/// units scaled so one cell spans source/cells pixels).
struct CellWeight {
  int cell;
  double weight;
};

inline std::vector<std::array<CellWeight, 2>> area_weights(std::int64_t source, int cells,
                                                           std::vector<int>& counts) {
  // Pixel i spans [i, i+1); cell j spans [j*source/cells, (j+1)*source/cells).
  // Working in units of 1/cells of a pixel keeps the arithmetic exact.
  std::vector<std::array<CellWeight, 2>> out(static_cast<std::size_t>(source));
  counts.assign(static_cast<std::size_t>(source), 0);
  for (std::int64_t i = 0; i < source; ++i) {
    const std::int64_t lo = i * cells;
    const std::int64_t hi = lo + cells;
    int n = 0;
    const int first = static_cast<int>(lo / source);
    const int last = static_cast<int>((hi - 1) / source);
    // A pixel straddles at most two cells when source >= cells; for
    // smaller sources it may span several, handled by the slow path.
    if (last - first <= 1) {
      for (int j = first; j <= last; ++j) {
        const std::int64_t c_lo = static_cast<std::int64_t>(j) * source;
        const std::int64_t c_hi = c_lo + source;
        const std::int64_t overlap = std::min(hi, c_hi) - std::max(lo, c_lo);
        out[static_cast<std::size_t>(i)][static_cast<std::size_t>(n++)] = {
            j, static_cast<double>(overlap) / static_cast<double>(cells)};
      }
      counts[static_cast<std::size_t>(i)] = n;
    } else {
      counts[static_cast<std::size_t>(i)] = -1;
    }
  }
  return out;
}

inline double overlap_weight(std::int64_t i, int j, std::int64_t source, int cells) {
  const std::int64_t lo = i * cells;
  const std::int64_t hi = lo + cells;
  const std::int64_t c_lo = static_cast<std::int64_t>(j) * source;
  const std::int64_t c_hi = c_lo + source;
  const std::int64_t overlap = std::min(hi, c_hi) - std::max(lo, c_lo);
  return overlap > 0 ? static_cast<double>(overlap) / static_cast<double>(cells) : 0.0;
}

inline double luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
}

}  // namespace detail

/// 88-dim descriptor of an RGB raster:
///   [0, 24)  per-channel 8-bin intensity histograms, each summing to 1;
///   [24, 88) 8x8 area-averaged grayscale thumbnail in [0, 1], row-major;
/// then L2-normalised.
template <typename Scalar = double>
Descriptor<Scalar> compute_descriptor(const Raster& img) {
  if (img.empty() || img.channels != 3) {
    throw Error(Errc::validation, "descriptor needs a non-empty RGB raster");
  }
  Eigen::Matrix<double, kDescriptorLength, 1> v = Eigen::Matrix<double, kDescriptorLength, 1>::Zero();
  std::array<std::uint64_t, kHistogramDims> counts{};
  Eigen::Matrix<double, kThumbnailSide, kThumbnailSide> thumb =
      Eigen::Matrix<double, kThumbnailSide, kThumbnailSide>::Zero();

  std::vector<int> nx, ny;
  const auto wx = detail::area_weights(img.width, kThumbnailSide, nx);
  const auto wy = detail::area_weights(img.height, kThumbnailSide, ny);
  Eigen::Matrix<double, kThumbnailSide, 1> row_acc;

  for (std::int64_t y = 0; y < img.height; ++y) {
    const std::uint8_t* p = img.row(y);
    row_acc.setZero();
    for (std::int64_t x = 0; x < img.width; ++x, p += 3) {
      ++counts[p[0] / 32];
      ++counts[kHistogramBins + p[1] / 32];
      ++counts[2 * kHistogramBins + p[2] / 32];
      const double g = detail::luma(p[0], p[1], p[2]);
      const auto xi = static_cast<std::size_t>(x);
      if (nx[xi] >= 0) {
        for (int k = 0; k < nx[xi]; ++k) {
          const auto& w = wx[xi][static_cast<std::size_t>(k)];
          row_acc(w.cell) += w.weight * g;
        }
      } else {
        for (int j = 0; j < kThumbnailSide; ++j) {
          row_acc(j) += detail::overlap_weight(x, j, img.width, kThumbnailSide) * g;
        }
      }
    }
    const auto yi = static_cast<std::size_t>(y);
    if (ny[yi] >= 0) {
      for (int k = 0; k < ny[yi]; ++k) {
        const auto& w = wy[yi][static_cast<std::size_t>(k)];
        thumb.row(w.cell) += w.weight * row_acc.transpose();
      }
    } else {
      for (int i = 0; i < kThumbnailSide; ++i) {
        thumb.row(i) += detail::overlap_weight(y, i, img.height, kThumbnailSide) * row_acc.transpose();
      }
    }
  }

  const double pixels = static_cast<double>(img.width) * static_cast<double>(img.height);
  for (int i = 0; i < kHistogramDims; ++i) {
    v(i) = static_cast<double>(counts[static_cast<std::size_t>(i)]) / pixels;
  }
  // Each cell covers (width/8) x (height/8) pixels of area.
  const double cell_area = pixels / (kThumbnailSide * kThumbnailSide);
  for (int r = 0; r < kThumbnailSide; ++r) {
    for (int c = 0; c < kThumbnailSide; ++c) {
      v(kHistogramDims + r * kThumbnailSide + c) = thumb(r, c) / cell_area;
    }
  }
  v /= v.norm();
  return v.template cast<Scalar>();
}

struct CaseDescriptor {
  std::string slide_id;
  Descriptor<double> vector;
  std::optional<Region> source_region;
};

struct SearchConfig {
  int k = kDefaultK;
};

struct SearchHit {
  std::string slide_id;
  double score = 0.0;
};

struct SearchResult {
  std::vector<SearchHit> hits;
  CaseDescriptor query;
};

/// Immutable library of whole-slide descriptors.
class DescriptorIndex {
 public:
  struct Entry {
    std::string slide_id;
    std::string meta_digest;
  };

  DescriptorIndex() = default;
  DescriptorIndex(std::vector<Entry> entries, DescriptorMatrix<double> vectors);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  const DescriptorMatrix<double>& vectors() const { return vectors_; }

  /// Exact top-k by cosine similarity, ties by slide_id.
  std::vector<SearchHit> search(const Descriptor<double>& query, const SearchConfig& cfg) const;

  /// Versioned binary file: magic, version, descriptor length, count, entries.
  void save(const std::filesystem::path& path) const;
  static DescriptorIndex load(const std::filesystem::path& path);

  friend bool operator==(const DescriptorIndex& a, const DescriptorIndex& b) {
    return a.entries_.size() == b.entries_.size() &&
           std::equal(a.entries_.begin(), a.entries_.end(), b.entries_.begin(),
                      [](const Entry& x, const Entry& y) {
                        return x.slide_id == y.slide_id && x.meta_digest == y.meta_digest;
                      }) &&
           a.vectors_ == b.vectors_;
  }

 private:
  std::vector<Entry> entries_;
  DescriptorMatrix<double> vectors_;
};

/// The pyramid level used as a slide's whole-slide thumbnail: the level
/// nearest to a longest side of kThumbnailLongestSide.
int thumbnail_level(const SlideMetadata& meta);

Descriptor<double> whole_slide_descriptor(SlideRepository& repo, std::string_view slide_id);

/// One descriptor per slide of the store. Errc::validation on an empty store.
DescriptorIndex build_index(SlideRepository& repo);

/// Slides added, removed or whose meta document changed since indexing.
std::vector<std::string> stale_slides(const DescriptorIndex& index, SlideRepository& repo);

inline std::filesystem::path default_index_path(const PyramidStore& store) {
  return store.root() / ".cbir-index.bin";
}

struct SearchResponse {
  SearchResult result;
  int k = kDefaultK;
  std::vector<std::string> warnings;
};

/// Index lifecycle plus query rendering. Rebuilds swap in a new immutable
/// index; concurrent searches keep the one they started with.
class CbirService {
 public:
  CbirService(SlideRepository& repo, std::filesystem::path index_path, bool auto_refresh = false);

  /// Builds, persists and installs a fresh index.
  std::shared_ptr<const DescriptorIndex> rebuild();

  /// Installed index, loading it from disk on first use.
  /// Errc::index_required when none exists.
  std::shared_ptr<const DescriptorIndex> index();

  /// Whole-slide (no region) or region query against the library.
  SearchResponse search_slide(std::string_view slide_id, const std::optional<Region>& region,
                              const SearchConfig& cfg);

 private:
  SlideRepository& repo_;
  std::filesystem::path index_path_;
  bool auto_refresh_;
  std::mutex mutex_;
  std::shared_ptr<const DescriptorIndex> index_;
};

}  // namespace slidestream::cbir
