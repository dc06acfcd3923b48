#include "slidestream/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "slidestream/error.hpp"

namespace slidestream {

namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

float lattice(std::uint64_t seed, int octave, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(octave) * 0x100000001B3ull ^
                                         mix(static_cast<std::uint64_t>(ix) * 0x9E3779B1ull ^
                                             (static_cast<std::uint64_t>(iy) << 32))));
  return static_cast<float>(h >> 40) * (1.0f / 16777216.0f);
}

float smooth(float t) { return t * t * (3.0f - 2.0f * t); }

float unit_from_seed(std::uint64_t seed, std::uint64_t salt) {
  return static_cast<float>(mix(seed * 31 + salt) >> 40) * (1.0f / 16777216.0f);
}

struct Octave {
  std::int64_t scale;
  float weight;
};

// Accumulates weight * noise(x, y) for x in [x0, x0 + n) into `acc`.
void add_octave(std::uint64_t seed, int index, const Octave& oct, std::int64_t y, std::int64_t x0,
                std::span<float> acc) {
  const std::int64_t s = oct.scale;
  const std::int64_t iy = y / s;
  const float fy = smooth(static_cast<float>(y - iy * s) / static_cast<float>(s));
  const std::int64_t n = static_cast<std::int64_t>(acc.size());
  const std::int64_t ix0 = x0 / s;
  const std::int64_t ix1 = (x0 + n - 1) / s + 1;
  std::vector<float> column(static_cast<std::size_t>(ix1 - ix0 + 1));
  for (std::int64_t ix = ix0; ix <= ix1; ++ix) {
    const float a = lattice(seed, index, ix, iy);
    const float b = lattice(seed, index, ix, iy + 1);
    column[static_cast<std::size_t>(ix - ix0)] = a + (b - a) * fy;
  }
  const float inv = 1.0f / static_cast<float>(s);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t x = x0 + i;
    const std::int64_t ix = x / s;
    const float fx = smooth(static_cast<float>(x - ix * s) * inv);
    const float a = column[static_cast<std::size_t>(ix - ix0)];
    const float b = column[static_cast<std::size_t>(ix - ix0 + 1)];
    acc[static_cast<std::size_t>(i)] += oct.weight * (a + (b - a) * fx);
  }
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f) + 0.5f);
}

}  // namespace

SyntheticSlide::SyntheticSlide(std::int64_t width, std::int64_t height, std::uint64_t seed)
    : width_(width), height_(height), seed_(seed) {
  if (width < 1 || height < 1) throw Error(Errc::validation, "synthetic slide needs positive size");
  // Stain palette jittered per seed so distinct slides are distinguishable.
  const float j0 = unit_from_seed(seed, 1) - 0.5f;
  const float j1 = unit_from_seed(seed, 2) - 0.5f;
  const float j2 = unit_from_seed(seed, 3) - 0.5f;
  background_ = {242.0f + 10.0f * j0, 238.0f + 10.0f * j1, 244.0f + 8.0f * j2};
  stroma_ = {225.0f + 40.0f * j0, 140.0f + 70.0f * j1, 185.0f + 50.0f * j2};
  nuclei_ = {105.0f + 50.0f * j2, 55.0f + 40.0f * j0, 150.0f + 60.0f * j1};
}

void SyntheticSlide::render_row(std::int64_t y, std::int64_t x0, std::span<std::uint8_t> out) const {
  const std::size_t n = out.size() / 3;
  const std::int64_t blob = std::max<std::int64_t>(std::max(width_, height_) / 5, 16);
  const std::array<Octave, 3> tissue_octaves{
      {{blob, 0.55f}, {std::max<std::int64_t>(blob / 4, 4), 0.3f},
       {std::max<std::int64_t>(blob / 16, 2), 0.15f}}};
  const std::array<Octave, 2> detail_octaves{{{24, 0.6f}, {6, 0.4f}}};

  std::vector<float> tissue(n, 0.0f);
  std::vector<float> detail(n, 0.0f);
  for (std::size_t i = 0; i < tissue_octaves.size(); ++i) {
    add_octave(seed_, static_cast<int>(i), tissue_octaves[i], y, x0, tissue);
  }
  for (std::size_t i = 0; i < detail_octaves.size(); ++i) {
    add_octave(seed_, 10 + static_cast<int>(i), detail_octaves[i], y, x0, detail);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const float m = smooth(std::clamp((tissue[i] - 0.42f) * 8.0f, 0.0f, 1.0f));
    const float d = std::clamp((detail[i] - 0.35f) * 2.0f, 0.0f, 1.0f);
    const float k = d * d;
    const float tr = stroma_.r + (nuclei_.r - stroma_.r) * k;
    const float tg = stroma_.g + (nuclei_.g - stroma_.g) * k;
    const float tb = stroma_.b + (nuclei_.b - stroma_.b) * k;
    out[3 * i + 0] = to_byte(background_.r + (tr - background_.r) * m);
    out[3 * i + 1] = to_byte(background_.g + (tg - background_.g) * m);
    out[3 * i + 2] = to_byte(background_.b + (tb - background_.b) * m);
  }
}

Raster SyntheticSlide::render(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const {
  Raster out(w, h, 3);
  for (std::int64_t r = 0; r < h; ++r) render_row(y + r, x, {out.row(r), out.stride()});
  return out;
}

namespace {

class SyntheticSource final : public RasterSource {
 public:
  explicit SyntheticSource(const SyntheticSlide& slide) : slide_(slide) {}

  std::int64_t width() const override { return slide_.width(); }
  std::int64_t height() const override { return slide_.height(); }

  void read_rows(std::span<std::uint8_t> out, std::int64_t count) override {
    const std::size_t stride = static_cast<std::size_t>(slide_.width() * 3);
    for (std::int64_t i = 0; i < count; ++i) {
      slide_.render_row(next_row_ + i, 0, out.subspan(static_cast<std::size_t>(i) * stride, stride));
    }
    next_row_ += count;
  }

 private:
  SyntheticSlide slide_;
  std::int64_t next_row_ = 0;
};

}  // namespace

std::unique_ptr<RasterSource> SyntheticSlide::source() const {
  return std::make_unique<SyntheticSource>(*this);
}

}  // namespace slidestream
