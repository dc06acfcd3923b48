#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "slidestream/error.hpp"
#include "slidestream/pyramid.hpp"
#include "oracles.hpp"

using namespace slidestream;
using slidestream::testing::membership_oracle;

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

// A slide whose max level is exactly w x h.
SlideMetadata meta_of(std::int64_t w, std::int64_t h, int tile = 256) {
  return make_metadata("s", w, h, tile);
}


}  // namespace

TEST(Pyramid, MaxLevelIsCeilLog2OfLongestSide) {
  EXPECT_EQ(compute_max_level(1, 1), 0);
  EXPECT_EQ(compute_max_level(2, 1), 1);
  EXPECT_EQ(compute_max_level(3, 3), 2);
  EXPECT_EQ(compute_max_level(4096, 4096), 12);
  EXPECT_EQ(compute_max_level(4097, 10), 13);
  EXPECT_EQ(compute_max_level(100000, 80000), 17);
  for (std::int64_t n = 1; n < 5000; ++n) {
    int l = 0;
    while ((std::int64_t{1} << l) < n) ++l;
    ASSERT_EQ(compute_max_level(n, 1), l) << n;
  }
}

TEST(Pyramid, LevelSpecExamples) {
  const auto m = meta_of(100000, 80000);
  EXPECT_EQ(m.max_level, 17);
  EXPECT_EQ(level_spec(m, 17), (LevelSpec{17, 100000, 80000, 1, 391, 313}));
  EXPECT_EQ(level_spec(m, 16), (LevelSpec{16, 50000, 40000, 2, 196, 157}));
  const auto one = meta_of(1, 1);
  EXPECT_EQ(one.max_level, 0);
  EXPECT_EQ(level_spec(one, 0), (LevelSpec{0, 1, 1, 1, 1, 1}));
  EXPECT_EQ(code_of([&] { level_spec(m, 18); }), Errc::level_out_of_range);
  EXPECT_EQ(code_of([&] { level_spec(m, -1); }), Errc::level_out_of_range);
}

TEST(Pyramid, LevelDimsHalveWithCeil) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    const auto m = meta_of(1 + rng() % 200000, 1 + rng() % 200000, 64 << (rng() % 4));
    EXPECT_EQ(level_spec(m, 0).width_px, 1);
    EXPECT_EQ(level_spec(m, 0).height_px, 1);
    for (int l = 0; l < m.max_level; ++l) {
      const auto fine = level_spec(m, l + 1), coarse = level_spec(m, l);
      ASSERT_EQ(coarse.width_px, (fine.width_px + 1) / 2);
      ASSERT_EQ(coarse.height_px, (fine.height_px + 1) / 2);
      ASSERT_EQ(coarse.downsample, fine.downsample * 2);
      ASSERT_EQ(coarse.cols, (coarse.width_px + m.tile_size - 1) / m.tile_size);
    }
  }
}

TEST(Pyramid, TileBoundsExamples) {
  const auto m = meta_of(1000, 1000);
  const int l = m.max_level;
  EXPECT_EQ(tile_bounds(m, {"s", l, 0, 0}), (Region{l, 0, 0, 256, 256}));
  EXPECT_EQ(tile_bounds(m, {"s", l, 3, 3}), (Region{l, 768, 768, 232, 232}));
  EXPECT_EQ(tile_bounds(meta_of(1, 1), {"s", 0, 0, 0}), (Region{0, 0, 0, 1, 1}));
  EXPECT_EQ(code_of([&] { tile_bounds(m, {"s", l, 4, 0}); }), Errc::tile_out_of_range);
  EXPECT_EQ(code_of([&] { tile_bounds(m, {"s", l, 0, -1}); }), Errc::tile_out_of_range);
  EXPECT_EQ(code_of([&] { tile_bounds(m, {"s", l + 1, 0, 0}); }), Errc::level_out_of_range);
}

TEST(Pyramid, TilesPartitionEveryLevel) {
  for (auto [w, h, t] : {std::tuple{1000, 700, 256}, {257, 1, 64}, {4096, 4095, 512}}) {
    const auto m = meta_of(w, h, t);
    for (int l = 0; l <= m.max_level; ++l) {
      const auto s = level_spec(m, l);
      std::vector<int> cover(static_cast<std::size_t>(s.width_px * s.height_px), 0);
      for (std::int64_t r = 0; r < s.rows; ++r) {
        for (std::int64_t c = 0; c < s.cols; ++c) {
          const Region b = tile_bounds(m, {"s", l, c, r});
          ASSERT_GT(b.width, 0);
          ASSERT_GT(b.height, 0);
          for (std::int64_t y = b.y; y < b.bottom(); ++y) {
            for (std::int64_t x = b.x; x < b.right(); ++x) ++cover[y * s.width_px + x];
          }
        }
      }
      for (int v : cover) ASSERT_EQ(v, 1);
    }
  }
}

TEST(Pyramid, TilesForViewportExamples) {
  const auto m = meta_of(1000, 1000);
  const int l = m.max_level;
  EXPECT_EQ(tiles_for_viewport(m, {l, 300, 300, 200, 200}),
            (std::vector<TileAddress>{{"s", l, 1, 1}}));
  const auto all = tiles_for_viewport(m, {l, 0, 0, 1000, 1000});
  ASSERT_EQ(all.size(), 16u);
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(all[i].col, static_cast<std::int64_t>(i % 4));
    EXPECT_EQ(all[i].row, static_cast<std::int64_t>(i / 4));
  }
  EXPECT_EQ(tiles_for_viewport(m, {l, 255, 0, 2, 1}),
            (std::vector<TileAddress>{{"s", l, 0, 0}, {"s", l, 1, 0}}));
  EXPECT_EQ(code_of([&] { tiles_for_viewport(m, {l, 1000, 0, 10, 10}); }), Errc::out_of_bounds);
  EXPECT_EQ(code_of([&] { tiles_for_viewport(m, {l, -20, 0, 20, 10}); }), Errc::out_of_bounds);
  EXPECT_EQ(code_of([&] { tiles_for_viewport(m, {l, 0, 0, 0, 10}); }), Errc::validation);
  // Over-scroll is clamped.
  EXPECT_EQ(tiles_for_viewport(m, {l, -50, -50, 100, 100}),
            (std::vector<TileAddress>{{"s", l, 0, 0}}));
}

TEST(Pyramid, TilesForViewportMatchesPixelMembershipOracle) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 1000; ++i) {
    const int tile = 16 << (rng() % 3);
    const auto m = meta_of(1 + rng() % (16 * tile), 1 + rng() % (16 * tile), tile);
    const int level = static_cast<int>(rng() % (m.max_level + 1));
    const auto s = level_spec(m, level);
    // Viewports may hang off any edge but always intersect the level.
    const std::int64_t w = 1 + rng() % (s.width_px + 20), h = 1 + rng() % (s.height_px + 20);
    const std::int64_t x = static_cast<std::int64_t>(rng() % (s.width_px + w - 1)) - (w - 1);
    const std::int64_t y = static_cast<std::int64_t>(rng() % (s.height_px + h - 1)) - (h - 1);
    const Viewport vp{level, x, y, w, h};
    const auto got = tiles_for_viewport(m, vp);
    std::set<std::pair<std::int64_t, std::int64_t>> got_set;
    for (const auto& a : got) got_set.emplace(a.col, a.row);
    ASSERT_EQ(got_set.size(), got.size());
    ASSERT_EQ(got_set, membership_oracle(m, vp)) << "viewport " << x << "," << y << " " << w << "x" << h;
    ASSERT_TRUE(std::is_sorted(got.begin(), got.end(), [](const auto& a, const auto& b) {
      return std::pair(a.row, a.col) < std::pair(b.row, b.col);
    }));
  }
}

TEST(Pyramid, TileBoundsRoundTripsThroughTilesForViewport) {
  const auto m = meta_of(3000, 1700, 128);
  for (int l = 0; l <= m.max_level; ++l) {
    const auto s = level_spec(m, l);
    for (std::int64_t r = 0; r < s.rows; ++r) {
      for (std::int64_t c = 0; c < s.cols; ++c) {
        const TileAddress a{"s", l, c, r};
        ASSERT_EQ(tiles_for_viewport(m, rect_cast<ViewportTag>(tile_bounds(m, a))),
                  std::vector<TileAddress>{a});
      }
    }
  }
}

TEST(Pyramid, ExpandRangeRings) {
  const auto m = meta_of(1000, 1000);
  const int l = m.max_level;
  const auto one = tile_range(m, {l, 300, 300, 10, 10});
  EXPECT_EQ(expand_range(m, one, 0).count(), 1);
  EXPECT_EQ(expand_range(m, one, 1).count(), 9);
  EXPECT_EQ(expand_range(m, tile_range(m, {l, 0, 0, 10, 10}), 1).count(), 4);
  EXPECT_EQ(expand_range(m, one, 4).count(), 16);
  EXPECT_EQ(code_of([&] { expand_range(m, one, -1); }), Errc::validation);
}

TEST(Pyramid, SelectLevelExamples) {
  const auto m = meta_of(100000, 80000);
  EXPECT_EQ(select_level(m, 4.0), 15);
  EXPECT_EQ(select_level(m, 2.83), 16);
  EXPECT_EQ(select_level(m, std::sqrt(8.0)), 16);
  EXPECT_EQ(select_level(m, 1e9), 0);
  EXPECT_EQ(select_level(m, 1.0), 17);
  EXPECT_EQ(select_level(m, 0.01), 17);
  EXPECT_EQ(select_level(m, 3.0), 15);  // log2(3) = 1.585 is nearer 2 than 1
  EXPECT_EQ(code_of([&] { select_level(m, 0.0); }), Errc::domain);
  EXPECT_EQ(code_of([&] { select_level(m, -2.0); }), Errc::domain);
}

TEST(Pyramid, SelectLevelIsMonotoneAndIdempotent) {
  const auto m = meta_of(100000, 80000);
  int prev = m.max_level;
  for (double d = 0.5; d < 1e6; d *= 1.013) {
    const int l = select_level(m, d);
    ASSERT_LE(l, prev) << d;
    ASSERT_GE(l, 0);
    prev = l;
    const double exact = static_cast<double>(level_spec(m, l).downsample);
    ASSERT_EQ(select_level(m, exact), l);
  }
}

TEST(Pyramid, PhysicalExtent) {
  auto m = make_metadata("s", 100000, 80000, 256, 0.25);
  const auto a = viewport_physical_extent(m, {m.max_level, 0, 0, 1000, 1000});
  EXPECT_DOUBLE_EQ(a.width_um, 250.0);
  const auto b = viewport_physical_extent(m, {m.max_level - 4, 0, 0, 1250, 800});
  EXPECT_DOUBLE_EQ(b.width_um, 5000.0);
  EXPECT_DOUBLE_EQ(b.height_um, 3200.0);
  auto unit = make_metadata("s", 10, 10, 256, 1.0);
  EXPECT_DOUBLE_EQ(viewport_physical_extent(unit, {unit.max_level, 0, 0, 1, 1}).width_um, 1.0);
  auto bare = make_metadata("s", 10, 10, 256);
  EXPECT_EQ(code_of([&] { viewport_physical_extent(bare, {bare.max_level, 0, 0, 1, 1}); }),
            Errc::unsupported);
}

TEST(Pyramid, MetadataValidation) {
  EXPECT_EQ(code_of([] { make_metadata("s", 0, 10, 256); }), Errc::validation);
  EXPECT_EQ(code_of([] { make_metadata("s", 10, 10, 0); }), Errc::validation);
  EXPECT_EQ(code_of([] { make_metadata("s", 10, 10, 256, -1.0); }), Errc::validation);
}
