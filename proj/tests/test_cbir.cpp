#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include <fmt/format.h>

#include "slidestream/cbir.hpp"
#include "slidestream/ingest.hpp"
#include "slidestream/raster_source.hpp"
#include "slidestream/synthetic.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace slidestream;
using namespace slidestream::cbir;
using slidestream::testing::oracle_descriptor;
using slidestream::testing::scan_oracle;
using slidestream::testing::TempDir;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::internal;
}



void ingest_raster(const PyramidStore& store, const std::string& id, const Raster& r) {
  IngestOptions o;
  o.slide_id = id;
  MemoryRasterSource src(r);
  ingest(src, o, store);
}

Raster perturbed(const Raster& r, int amplitude, std::uint64_t seed) {
  Raster out = r;
  std::mt19937_64 rng(seed);
  for (auto& p : out.pixels) {
    const int v = p + static_cast<int>(rng() % (2 * amplitude + 1)) - amplitude;
    p = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Descriptor, UniformGray) {
  const Raster g(40, 30, 3, 128);
  const auto d = compute_descriptor(g);
  EXPECT_NEAR(d.norm(), 1.0, 1e-12);
  for (int c = 0; c < 3; ++c) {
    for (int b = 0; b < 8; ++b) {
      if (b == 4) EXPECT_GT(d(c * 8 + b), 0.0); else EXPECT_EQ(d(c * 8 + b), 0.0);
    }
  }
  for (int i = 25; i < 88; ++i) EXPECT_NEAR(d(i), d(24), 1e-12);
  EXPECT_EQ(compute_descriptor(g), compute_descriptor(Raster(40, 30, 3, 128)));
}

TEST(Descriptor, MatchesIndependentOracle) {
  for (auto [w, h] : {std::pair{512, 512}, {100, 37}, {5, 3}, {1, 1}, {9, 130}}) {
    const Raster r = slidestream::testing::random_raster(w, h, w * 31 + h);
    const auto got = compute_descriptor(r);
    const auto want = oracle_descriptor(r);
    for (int i = 0; i < 88; ++i) ASSERT_NEAR(got(i), want[static_cast<std::size_t>(i)], 1e-9) << w << "x" << h << " dim " << i;
  }
  EXPECT_EQ(code_of([] { compute_descriptor(Raster{}); }), Errc::validation);
}

TEST(Descriptor, FloatInstantiation) {
  const Raster r = slidestream::testing::random_raster(64, 64, 1);
  const Descriptor<float> f = compute_descriptor<float>(r);
  EXPECT_NEAR((f.cast<double>() - compute_descriptor(r)).norm(), 0.0, 1e-6);
}

TEST(Descriptor, SubBinShiftKeepsHistogram) {
  // Every value sits in [40, 50] of bin [32, 64); shifting by 5 stays inside.
  Raster r(50, 50, 3);
  std::mt19937 rng(3);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(40 + rng() % 11);
  Raster s = r;
  for (auto& p : s.pixels) p = static_cast<std::uint8_t>(p + 5);
  const auto da = compute_descriptor(r), db = compute_descriptor(s);
  const Eigen::Matrix<double, 24, 1> ha = da.head<24>() / da.head<24>().sum();
  const Eigen::Matrix<double, 24, 1> hb = db.head<24>() / db.head<24>().sum();
  EXPECT_NEAR((ha - hb).norm(), 0.0, 1e-15);
  EXPECT_NEAR(ha(1), 1.0 / 3.0, 1e-15);
}

TEST(Index, SearchMatchesLinearScanAndIsMonotone) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 1000;
    std::vector<DescriptorIndex::Entry> entries;
    DescriptorMatrix<double> m(static_cast<Eigen::Index>(n), kDescriptorLength);
    for (std::size_t i = 0; i < n; ++i) {
      entries.push_back({fmt::format("s{:04}", i), "d"});
      for (int d = 0; d < kDescriptorLength; ++d) m(static_cast<Eigen::Index>(i), d) = nd(rng);
      // Duplicate rows exercise the id tie-break.
      if (i > 0 && rng() % 10 == 0) m.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(i - 1));
    }
    const DescriptorIndex index(entries, m);
    Descriptor<double> q;
    for (int d = 0; d < kDescriptorLength; ++d) q(d) = nd(rng);
    const int k = 1 + static_cast<int>(rng() % 40);
    const auto got = index.search(q, {k});
    const auto want = scan_oracle(index, q, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      ASSERT_EQ(got[i].slide_id, want[i].slide_id) << "trial " << trial << " rank " << i;
      ASSERT_NEAR(got[i].score, want[i].score, 1e-12);
      ASSERT_LE(std::abs(got[i].score), 1.0);
      if (i) ASSERT_GE(got[i - 1].score, got[i].score);
    }
  }
}

TEST(Index, OrthogonalAppendKeepsRelativeOrder) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  // Library lives in the first 80 dims; the query too.
  std::vector<DescriptorIndex::Entry> entries;
  DescriptorMatrix<double> m = DescriptorMatrix<double>::Zero(30, kDescriptorLength);
  for (int i = 0; i < 30; ++i) {
    entries.push_back({fmt::format("a{:02}", i), "d"});
    for (int d = 0; d < 80; ++d) m(i, d) = ud(rng);
  }
  Descriptor<double> q = Descriptor<double>::Zero();
  for (int d = 0; d < 80; ++d) q(d) = ud(rng);
  const auto before = DescriptorIndex(entries, m).search(q, {30});

  DescriptorMatrix<double> m2 = DescriptorMatrix<double>::Zero(31, kDescriptorLength);
  m2.topRows(30) = m;
  m2(30, 85) = 1.0;  // orthogonal to the query
  entries.push_back({"zz", "d"});
  const auto after = DescriptorIndex(entries, m2).search(q, {31});
  std::vector<std::string> a, b;
  for (const auto& h : before) a.push_back(h.slide_id);
  for (const auto& h : after) if (h.slide_id != "zz") b.push_back(h.slide_id);
  EXPECT_EQ(a, b);
  EXPECT_EQ(after.back().slide_id, "zz");
  EXPECT_NEAR(after.back().score, 0.0, 1e-12);
}

TEST(Index, SaveLoadRoundTrip) {
  TempDir dir("cbir");
  std::vector<DescriptorIndex::Entry> entries{{"a", "x"}, {"b", "y"}};
  DescriptorMatrix<double> m = DescriptorMatrix<double>::Random(2, kDescriptorLength);
  const DescriptorIndex idx(entries, m);
  idx.save(dir / "i.bin");
  EXPECT_EQ(DescriptorIndex::load(dir / "i.bin"), idx);
  const auto bytes = read_file(dir / "i.bin");
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "SSCBIRX\n");

  auto broken = bytes;
  broken[0] = 'X';
  std::ofstream(dir / "bad.bin", std::ios::binary).write(reinterpret_cast<const char*>(broken.data()),
                                                         static_cast<std::streamsize>(broken.size()));
  EXPECT_EQ(code_of([&] { DescriptorIndex::load(dir / "bad.bin"); }), Errc::corrupt);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  std::ofstream(dir / "short.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(truncated.data()), static_cast<std::streamsize>(truncated.size()));
  EXPECT_EQ(code_of([&] { DescriptorIndex::load(dir / "short.bin"); }), Errc::corrupt);
}

TEST(Library, NoisyCopyOutranksUnrelatedSlides) {
  TempDir dir("cbir");
  PyramidStore store(dir.path());
  const Raster query = SyntheticSlide(512, 512, 1000).render_all();
  ingest_raster(store, "query", query);
  ingest_raster(store, "copy", perturbed(query, 12, 7));
  for (int i = 0; i < 18; ++i) {
    ingest_raster(store, fmt::format("other-{:02}", i), SyntheticSlide(512, 512, 1 + i).render_all());
  }
  SlideRepository repo(store);
  CbirService svc(repo, default_index_path(store));
  EXPECT_EQ(code_of([&] { svc.search_slide("query", std::nullopt, {}); }), Errc::index_required);
  const auto index = svc.rebuild();
  ASSERT_EQ(index->size(), 20u);

  const auto r = svc.search_slide("query", std::nullopt, {});
  ASSERT_EQ(r.k, 5);
  ASSERT_EQ(r.result.hits.size(), 5u);
  EXPECT_EQ(r.result.hits[0].slide_id, "query");
  EXPECT_NEAR(r.result.hits[0].score, 1.0, 1e-6);
  EXPECT_EQ(r.result.hits[1].slide_id, "copy");
  EXPECT_TRUE(r.warnings.empty());

  const auto full = svc.search_slide("query", std::nullopt, {100});
  ASSERT_EQ(full.result.hits.size(), 20u);
  const auto oracle = scan_oracle(*index, whole_slide_descriptor(repo, "query"), 100);
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    EXPECT_EQ(full.result.hits[i].slide_id, oracle[i].slide_id);
  }
  // Self-retrieval for every library slide.
  for (const auto& e : index->entries()) {
    const auto self = svc.search_slide(e.slide_id, std::nullopt, {1});
    EXPECT_EQ(self.result.hits[0].slide_id, e.slide_id);
    EXPECT_NEAR(self.result.hits[0].score, 1.0, 1e-6);
  }
  EXPECT_EQ(code_of([&] { svc.search_slide("query", std::nullopt, {0}); }), Errc::validation);
  EXPECT_EQ(code_of([&] { svc.search_slide("ghost", std::nullopt, {}); }), Errc::slide_not_found);
}

TEST(Library, ReindexIsByteIdenticalAndStalenessIsReported) {
  TempDir dir("cbir");
  PyramidStore store(dir.path());
  ingest_raster(store, "a", SyntheticSlide(300, 200, 1).render_all());
  ingest_raster(store, "b", SyntheticSlide(300, 200, 2).render_all());
  SlideRepository repo(store);
  const auto path = default_index_path(store);
  CbirService svc(repo, path);
  svc.rebuild();
  const auto first = read_file(path);
  svc.rebuild();
  EXPECT_EQ(read_file(path), first);

  ingest_raster(store, "c", SyntheticSlide(300, 200, 3).render_all());
  const auto stale = svc.search_slide("a", std::nullopt, {});
  ASSERT_FALSE(stale.warnings.empty());
  EXPECT_EQ(stale.result.hits.size(), 2u);
  EXPECT_EQ(stale_slides(*svc.index(), repo), std::vector<std::string>{"c"});

  CbirService fresh(repo, path, /*auto_refresh=*/true);
  const auto refreshed = fresh.search_slide("a", std::nullopt, {});
  EXPECT_TRUE(refreshed.warnings.empty());
  EXPECT_EQ(refreshed.result.hits.size(), 3u);
}

TEST(Library, RegionQuery) {
  TempDir dir("cbir");
  PyramidStore store(dir.path());
  const Raster a = SyntheticSlide(600, 400, 11).render_all();
  ingest_raster(store, "a", a);
  ingest_raster(store, "b", SyntheticSlide(600, 400, 12).render_all());
  SlideRepository repo(store);
  CbirService svc(repo, default_index_path(store));
  svc.rebuild();
  const int l = store.read_metadata("a").max_level;
  const auto r = svc.search_slide("a", Region{l, 100, 100, 200, 150}, {});
  ASSERT_TRUE(r.result.query.source_region.has_value());
  EXPECT_EQ(r.result.query.vector, compute_descriptor(crop(a, 100, 100, 200, 150)));
  EXPECT_EQ(code_of([&] { svc.search_slide("a", Region{l, 5000, 0, 10, 10}, {}); }), Errc::out_of_bounds);
}

TEST(Library, EmptyStoreIsValidationError) {
  TempDir dir("cbir");
  PyramidStore store(dir.path());
  SlideRepository repo(store);
  EXPECT_EQ(code_of([&] { build_index(repo); }), Errc::validation);
}
