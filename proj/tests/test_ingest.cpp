#include <gtest/gtest.h>

#include <fstream>
#include <iostream>
#include <thread>

#include "slidestream/error.hpp"
#include "slidestream/image.hpp"
#include "slidestream/ingest.hpp"
#include "slidestream/raster_source.hpp"
#include "slidestream/slide_repository.hpp"
#include "slidestream/store.hpp"
#include "slidestream/synthetic.hpp"
#include "support.hpp"

using namespace slidestream;
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

Raster gray(std::int64_t w, std::int64_t h, std::initializer_list<int> values) {
  Raster r(w, h, 1);
  std::size_t i = 0;
  for (int v : values) r.pixels[i++] = static_cast<std::uint8_t>(v);
  return r;
}

IngestOptions opts(const std::string& id, int tile = 256) {
  IngestOptions o;
  o.slide_id = id;
  o.tile_size = tile;
  return o;
}

IngestReport ingest_raster(const Raster& r, const IngestOptions& o, const PyramidStore& store) {
  MemoryRasterSource src(r);
  return ingest(src, o, store);
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[std::filesystem::relative(e.path(), dir).string()] =
        std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

}  // namespace

TEST(Downsample, Examples) {
  EXPECT_EQ(downsample_2x(gray(2, 2, {0, 0, 255, 255})).pixels, std::vector<std::uint8_t>{128});
  EXPECT_EQ(downsample_2x(gray(3, 1, {10, 20, 30})).pixels, (std::vector<std::uint8_t>{15, 30}));
  EXPECT_EQ(downsample_2x(gray(1, 3, {10, 20, 30})).pixels, (std::vector<std::uint8_t>{15, 30}));
  EXPECT_EQ(code_of([] { downsample_2x(Raster{}); }), Errc::validation);
}

TEST(Downsample, ConstantImagesStayConstant) {
  for (int c : {0, 1, 77, 128, 254, 255}) {
    Raster r(37, 19, 3, static_cast<std::uint8_t>(c));
    while (r.width > 1 || r.height > 1) {
      r = downsample_2x(r);
      for (auto p : r.pixels) ASSERT_EQ(p, c);
    }
  }
}

TEST(Downsample, MatchesRoundedBlockMean) {
  const Raster src = slidestream::testing::random_raster(33, 17, 5);
  const Raster half = downsample_2x(src);
  ASSERT_EQ(half.width, 17);
  ASSERT_EQ(half.height, 9);
  for (std::int64_t y = 0; y < half.height; ++y) {
    for (std::int64_t x = 0; x < half.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        int sum = 0, n = 0;
        for (std::int64_t yy = 2 * y; yy < std::min<std::int64_t>(2 * y + 2, 17); ++yy) {
          for (std::int64_t xx = 2 * x; xx < std::min<std::int64_t>(2 * x + 2, 33); ++xx) {
            sum += src.at(xx, yy, c);
            ++n;
          }
        }
        ASSERT_EQ(half.at(x, y, c), (sum + n / 2) / n);
      }
    }
  }
}

TEST(Codec, PngIsLosslessAndDeterministic) {
  const Raster r = slidestream::testing::random_raster(61, 40, 9);
  const auto a = encode_image(r, TileCodec::png);
  EXPECT_EQ(a, encode_image(r, TileCodec::png));
  EXPECT_EQ(decode_image(a), r);
}

TEST(Codec, JpegIsApproximate) {
  Raster r(64, 64, 3, 100);
  const Raster back = decode_image(encode_image(r, TileCodec::jpeg, 90));
  ASSERT_EQ(back.width, 64);
  for (auto p : back.pixels) ASSERT_NEAR(p, 100, 3);
}

TEST(Codec, GarbageIsCorrupt) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_EQ(code_of([&] { decode_image(junk); }), Errc::corrupt);
  auto png = encode_image(Raster(10, 10, 3, 5), TileCodec::png);
  png.resize(png.size() / 2);
  EXPECT_EQ(code_of([&] { decode_image(png); }), Errc::corrupt);
}

TEST(Ingest, TileCountFor4096Square) {
  // Independent count over the halve-and-ceil chain 4096, 2048, ..., 1:
  // 16x16 + 8x8 + 4x4 + 2x2 + nine single-tile levels (256 px and below).
  std::int64_t expected = 0;
  int levels = 0;
  for (std::int64_t d = 4096;; d = (d + 1) / 2) {
    const std::int64_t g = (d + 255) / 256;
    expected += g * g;
    ++levels;
    if (d == 1) break;
  }
  ASSERT_EQ(levels, 13);
  ASSERT_EQ(expected, 256 + 64 + 16 + 4 + 9);

  TempDir dir("ingest");
  PyramidStore store(dir.path());
  const SyntheticSlide synth(4096, 4096, 3);
  auto src = synth.source();
  const IngestReport rep = ingest(*src, opts("big"), store);
  EXPECT_EQ(rep.levels_written, 13);
  EXPECT_EQ(rep.tiles_written, expected);
  const SlideMetadata m = store.read_metadata("big");
  EXPECT_EQ(m.max_level, 12);
  EXPECT_EQ(level_spec(m, 12).cols, 16);
  const LayoutReport layout = store.verify_layout("big");
  EXPECT_TRUE(layout.ok());
  EXPECT_EQ(layout.expected_tiles, static_cast<std::size_t>(expected));

  auto again = synth.source();
  EXPECT_EQ(code_of([&] { ingest(*again, opts("big"), store); }), Errc::conflict);
}

TEST(Ingest, SinglePixel) {
  TempDir dir("ingest");
  PyramidStore store(dir.path());
  Raster r(1, 1, 3, 9);
  const auto rep = ingest_raster(r, opts("one"), store);
  EXPECT_EQ(rep.levels_written, 1);
  EXPECT_EQ(rep.tiles_written, 1);
  SlideRepository repo(store);
  EXPECT_EQ(repo.decode_tile({"one", 0, 0, 0}), r);
}

TEST(Ingest, RejectsBadOptions) {
  TempDir dir("ingest");
  PyramidStore store(dir.path());
  Raster r(4, 4, 3, 1);
  EXPECT_EQ(code_of([&] { ingest_raster(r, opts("Bad Id"), store); }), Errc::validation);
  EXPECT_EQ(code_of([&] { ingest_raster(r, opts("ok", 8), store); }), Errc::validation);
  EXPECT_EQ(code_of([&] { ingest_raster(Raster(0, 4, 3), opts("ok"), store); }), Errc::validation);
  EXPECT_EQ(code_of([&] { ingest(IngestJob{dir / "nope.png", opts("ok")}, store); }), Errc::io);
  EXPECT_FALSE(store.contains("ok"));
}

TEST(Ingest, EveryLevelMatchesBlockAverageOracle) {
  TempDir dir("ingest");
  PyramidStore store(dir.path());
  for (auto [w, h, tile] : {std::tuple{512, 512, 256}, {301, 173, 64}}) {
    const Raster src = slidestream::testing::random_raster(w, h, 11 + w);
    const std::string id = "r" + std::to_string(w);
    ingest_raster(src, opts(id, tile), store);
    SlideRepository repo(store);
    const SlideMetadata m = repo.open_slide(id)->meta;
    double worst = 0;
    for (int l = 0; l <= m.max_level; ++l) {
      const LevelSpec s = level_spec(m, l);
      const Raster img = repo.render_level(id, l);
      ASSERT_EQ(img.width, s.width_px);
      ASSERT_EQ(img.height, s.height_px);
      for (std::int64_t y = 0; y < s.height_px; ++y) {
        for (std::int64_t x = 0; x < s.width_px; ++x) {
          for (int c = 0; c < 3; ++c) {
            const double want = slidestream::testing::block_mean(src, s.downsample, x, y, c);
            worst = std::max(worst, std::abs(img.at(x, y, c) - want));
          }
        }
      }
    }
    std::cout << w << "x" << h << " worst block-mean error " << worst << "\n";
    EXPECT_LE(worst, 1.0) << w << "x" << h;
    // Full resolution is the source itself.
    EXPECT_EQ(repo.render_level(id, m.max_level), src);
  }
}

TEST(Ingest, DeterministicAcrossRuns) {
  TempDir a("det"), b("det");
  const Raster src = slidestream::testing::random_raster(700, 300, 4);
  IngestOptions o = opts("d", 128);
  o.workers = 3;
  ingest_raster(src, o, PyramidStore(a.path()));
  o.workers = 1;
  ingest_raster(src, o, PyramidStore(b.path()));
  EXPECT_EQ(snapshot(a.path()), snapshot(b.path()));
}

TEST(Ingest, OverwriteReplaces) {
  TempDir dir("ingest");
  PyramidStore store(dir.path());
  ingest_raster(Raster(10, 10, 3, 1), opts("x"), store);
  IngestOptions o = opts("x");
  o.overwrite = true;
  ingest_raster(Raster(20, 5, 3, 2), o, store);
  EXPECT_EQ(store.read_metadata("x").width_px, 20);
  EXPECT_EQ(store.list_slide_ids(), std::vector<std::string>{"x"});
}

TEST(Ingest, ConcurrentSameIdOnlyOneWins) {
  TempDir dir("ingest");
  PyramidStore store(dir.path());
  const Raster src = slidestream::testing::random_raster(600, 600, 8);
  std::atomic<int> ok{0}, conflicts{0};
  std::vector<std::thread> ts;
  for (int i = 0; i < 3; ++i) {
    ts.emplace_back([&] {
      try {
        ingest_raster(src, opts("same"), store);
        ++ok;
      } catch (const Error& e) {
        if (e.code() == Errc::conflict) ++conflicts;
      }
    });
  }
  for (auto& t : ts) t.join();
  EXPECT_EQ(ok.load(), 1);
  EXPECT_EQ(conflicts.load(), 2);
  EXPECT_TRUE(store.verify_layout("same").ok());
}

TEST(Ingest, PngFileSourceAndAlphaDrop) {
  TempDir dir("ingest");
  const Raster src = slidestream::testing::random_raster(130, 70, 2);
  write_raster_file(dir / "a.png", src);
  write_raster_file(dir / "a.ppm", src);
  PyramidStore store(dir / "store");
  ingest(IngestJob{dir / "a.png", opts("png")}, store);
  ingest(IngestJob{dir / "a.ppm", opts("ppm")}, store);
  SlideRepository repo(store);
  EXPECT_EQ(repo.render_level("png", 8), src);
  EXPECT_EQ(repo.render_level("ppm", 8), src);
}

TEST(Ingest, JpegCodecAndMpp) {
  TempDir dir("ingest");
  PyramidStore store(dir.path());
  IngestOptions o = opts("j");
  o.codec = TileCodec::jpeg;
  o.mpp = 0.25;
  ingest_raster(Raster(300, 300, 3, 50), o, store);
  const auto m = store.read_metadata("j");
  EXPECT_EQ(m.codec, TileCodec::jpeg);
  EXPECT_EQ(m.mpp, 0.25);
  EXPECT_TRUE(std::filesystem::exists(PyramidStore::tile_path(store.slide_dir("j"), m, 9, 1, 1)));
}

TEST(Synthetic, DeterministicAndSized) {
  const SyntheticSlide a(300, 200, 5), b(300, 200, 5), c(300, 200, 6);
  const Raster ra = a.render_all();
  EXPECT_EQ(ra.width, 300);
  EXPECT_EQ(ra.height, 200);
  EXPECT_EQ(ra, b.render_all());
  EXPECT_NE(ra, c.render_all());
  EXPECT_EQ(a.render(50, 60, 10, 10), crop(ra, 50, 60, 10, 10));
}
