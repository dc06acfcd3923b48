#include "slidestream/raster_source.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include <fmt/format.h>

#include "slidestream/error.hpp"
#include "slidestream/logging.hpp"

namespace slidestream {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw Error(Errc::io, fmt::format("cannot open '{}'", path.string()));
  return f;
}

// ---------------------------------------------------------------- PNG

void png_source_error(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void png_source_warning(png_structp, png_const_charp) {}

class PngFileSource final : public RasterSource {
 public:
  explicit PngFileSource(const std::filesystem::path& path) : path_(path), file_(open_file(path)) {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error_, png_source_error,
                                  png_source_warning);
    info_ = png_ ? png_create_info_struct(png_) : nullptr;
    if (!png_ || !info_) throw Error(Errc::internal, "libpng initialisation failed");
    if (setjmp(png_jmpbuf(png_))) fail();
    png_init_io(png_, file_.get());
    png_read_info(png_, info_);
    const int color = png_get_color_type(png_, info_);
    if (color & PNG_COLOR_MASK_ALPHA) {
      log()->warn("dropping alpha channel of '{}'", path_.string());
    }
    png_set_strip_16(png_);
    png_set_strip_alpha(png_);
    png_set_palette_to_rgb(png_);
    png_set_expand_gray_1_2_4_to_8(png_);
    png_set_gray_to_rgb(png_);
    interlaced_ = png_get_interlace_type(png_, info_) != PNG_INTERLACE_NONE;
    const int passes = png_set_interlace_handling(png_);
    png_read_update_info(png_, info_);
    width_ = png_get_image_width(png_, info_);
    height_ = png_get_image_height(png_, info_);
    if (width_ == 0 || height_ == 0) {
      throw Error(Errc::validation, fmt::format("'{}' has a zero dimension", path_.string()));
    }
    if (interlaced_) {
      // Adam7 needs every pass before any row is final.
      whole_ = Raster(width_, height_, 3);
      for (int pass = 0; pass < passes; ++pass) {
        for (std::int64_t y = 0; y < height_; ++y) png_read_row(png_, whole_.row(y), nullptr);
      }
    }
  }

  ~PngFileSource() override { png_destroy_read_struct(&png_, &info_, nullptr); }

  std::int64_t width() const override { return width_; }
  std::int64_t height() const override { return height_; }

  void read_rows(std::span<std::uint8_t> out, std::int64_t count) override {
    const std::size_t stride = static_cast<std::size_t>(width_ * 3);
    if (next_row_ + count > height_) throw Error(Errc::io, "read past end of PNG");
    if (interlaced_) {
      std::memcpy(out.data(), whole_.row(next_row_), stride * static_cast<std::size_t>(count));
      next_row_ += count;
      return;
    }
    if (setjmp(png_jmpbuf(png_))) fail();
    for (std::int64_t i = 0; i < count; ++i) {
      png_read_row(png_, out.data() + static_cast<std::size_t>(i) * stride, nullptr);
    }
    next_row_ += count;
  }

 private:
  [[noreturn]] void fail() {
    throw Error(Errc::corrupt, fmt::format("cannot decode '{}': {}", path_.string(), error_));
  }

  std::filesystem::path path_;
  FilePtr file_;
  std::string error_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
  bool interlaced_ = false;
  Raster whole_;
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::int64_t next_row_ = 0;
};

// ---------------------------------------------------------------- JPEG

struct JpegSourceError {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_source_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegSourceError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_source_silent(j_common_ptr) {}

class JpegFileSource final : public RasterSource {
 public:
  explicit JpegFileSource(const std::filesystem::path& path) : path_(path), file_(open_file(path)) {
    cinfo_.err = jpeg_std_error(&err_.base);
    err_.base.error_exit = jpeg_source_exit;
    err_.base.output_message = jpeg_source_silent;
    jpeg_create_decompress(&cinfo_);
    if (setjmp(err_.jump)) fail();
    jpeg_stdio_src(&cinfo_, file_.get());
    jpeg_read_header(&cinfo_, TRUE);
    cinfo_.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo_);
  }

  ~JpegFileSource() override { jpeg_destroy_decompress(&cinfo_); }

  std::int64_t width() const override { return cinfo_.output_width; }
  std::int64_t height() const override { return cinfo_.output_height; }

  void read_rows(std::span<std::uint8_t> out, std::int64_t count) override {
    if (setjmp(err_.jump)) fail();
    const std::size_t stride = static_cast<std::size_t>(width() * 3);
    for (std::int64_t i = 0; i < count; ++i) {
      JSAMPROW row = out.data() + static_cast<std::size_t>(i) * stride;
      if (jpeg_read_scanlines(&cinfo_, &row, 1) != 1) {
        throw Error(Errc::io, fmt::format("'{}' ended early", path_.string()));
      }
    }
  }

 private:
  [[noreturn]] void fail() {
    throw Error(Errc::corrupt, fmt::format("cannot decode '{}': {}", path_.string(), err_.message));
  }

  std::filesystem::path path_;
  FilePtr file_;
  jpeg_decompress_struct cinfo_{};
  JpegSourceError err_{};
};

// ---------------------------------------------------------------- PPM

class PpmFileSource final : public RasterSource {
 public:
  explicit PpmFileSource(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error(Errc::io, fmt::format("cannot open '{}'", path.string()));
    std::string magic;
    in_ >> magic;
    long long values[3] = {0, 0, 0};
    for (auto& v : values) {
      skip_comments();
      in_ >> v;
    }
    if (!in_ || magic != "P6" || values[2] != 255) {
      throw Error(Errc::io, fmt::format("'{}' is not an 8-bit binary PPM", path.string()));
    }
    in_.get();
    width_ = values[0];
    height_ = values[1];
    if (width_ <= 0 || height_ <= 0) {
      throw Error(Errc::validation, fmt::format("'{}' has a zero dimension", path.string()));
    }
  }

  std::int64_t width() const override { return width_; }
  std::int64_t height() const override { return height_; }

  void read_rows(std::span<std::uint8_t> out, std::int64_t count) override {
    const auto bytes = static_cast<std::streamsize>(count * width_ * 3);
    in_.read(reinterpret_cast<char*>(out.data()), bytes);
    if (in_.gcount() != bytes) {
      throw Error(Errc::io, fmt::format("'{}' is truncated", path_.string()));
    }
  }

 private:
  void skip_comments() {
    in_ >> std::ws;
    while (in_.peek() == '#') {
      std::string line;
      std::getline(in_, line);
      in_ >> std::ws;
    }
  }

  std::filesystem::path path_;
  std::ifstream in_;
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
};

}  // namespace

MemoryRasterSource::MemoryRasterSource(const Raster& raster) : raster_(raster) {
  if (raster.channels != 3) throw Error(Errc::validation, "memory source must be RGB");
  if (raster.empty()) throw Error(Errc::validation, "memory source has a zero dimension");
}

void MemoryRasterSource::read_rows(std::span<std::uint8_t> out, std::int64_t count) {
  if (next_row_ + count > raster_.height) throw Error(Errc::io, "read past end of raster");
  std::memcpy(out.data(), raster_.row(next_row_), raster_.stride() * static_cast<std::size_t>(count));
  next_row_ += count;
}

std::unique_ptr<RasterSource> open_raster(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error(Errc::io, fmt::format("cannot open '{}'", path.string()));
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), sizeof sig);
  const auto got = probe.gcount();
  probe.close();
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return std::make_unique<PngFileSource>(path);
  if (got >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) {
    return std::make_unique<JpegFileSource>(path);
  }
  if (got >= 2 && sig[0] == 'P' && sig[1] == '6') return std::make_unique<PpmFileSource>(path);
  throw Error(Errc::unsupported, fmt::format("'{}' is not a PNG, JPEG or PPM file", path.string()));
}

Raster read_raster_file(const std::filesystem::path& path) {
  auto src = open_raster(path);
  Raster out(src->width(), src->height(), 3);
  src->read_rows(out.pixels, out.height);
  return out;
}

void write_raster_file(const std::filesystem::path& path, const Raster& raster) {
  const std::string ext = path.extension().string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, fmt::format("cannot write '{}'", path.string()));
  if (ext == ".ppm") {
    if (raster.channels != 3) throw Error(Errc::unsupported, "PPM output needs RGB");
    out << "P6\n" << raster.width << ' ' << raster.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(raster.pixels.data()),
              static_cast<std::streamsize>(raster.pixels.size()));
  } else {
    const TileCodec codec = (ext == ".jpg" || ext == ".jpeg") ? TileCodec::jpeg : TileCodec::png;
    const auto bytes = encode_image(raster, codec);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw Error(Errc::io, fmt::format("failed writing '{}'", path.string()));
}

}  // namespace slidestream
