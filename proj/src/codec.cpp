// In-memory PNG and JPEG encode/decode for tiles and region renders.

#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include <fmt/format.h>

#include "slidestream/error.hpp"
#include "slidestream/image.hpp"

namespace slidestream {

namespace {

// ---------------------------------------------------------------- PNG

struct PngWriteBuffer {
  std::vector<std::uint8_t>* out;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->out->insert(buf->out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_png(const Raster& img) {
  std::vector<std::uint8_t> out;
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb,
                                            png_warning_cb);
  if (!png) throw Error(Errc::internal, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error(Errc::internal, fmt::format("png encode failed: {}", err));
  }
  PngWriteBuffer buf{&out};
  png_set_write_fn(png, &buf, png_write_cb, png_flush_cb);
  const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY
                    : img.channels == 4 ? PNG_COLOR_TYPE_RGBA
                                        : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 1);
  png_set_filter(png, 0, PNG_FILTER_SUB | PNG_FILTER_UP);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.row(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

struct PngReadBuffer {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->pos + len > buf->data.size()) png_error(png, "truncated PNG data");
  std::memcpy(out, buf->data.data() + buf->pos, len);
  buf->pos += len;
}

Raster decode_png(std::span<const std::uint8_t> bytes) {
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb,
                                           png_warning_cb);
  if (!png) throw Error(Errc::internal, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  Raster out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    throw Error(Errc::corrupt, fmt::format("png decode failed: {}", err));
  }
  PngReadBuffer buf{bytes, 0};
  png_set_read_fn(png, &buf, png_read_cb);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  const int passes = png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out = Raster(png_get_image_width(png, info), png_get_image_height(png, info), 3);
  for (int pass = 0; pass < passes; ++pass) {
    for (std::int64_t y = 0; y < out.height; ++y) png_read_row(png, out.row(y), nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

// ---------------------------------------------------------------- JPEG

struct JpegErrorMgr {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit_cb(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent_output(j_common_ptr) {}

std::vector<std::uint8_t> encode_jpeg(const Raster& img, int quality) {
  if (img.channels != 3 && img.channels != 1) {
    throw Error(Errc::unsupported, "jpeg encoding needs 1 or 3 channels");
  }
  jpeg_compress_struct cinfo{};
  JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit_cb;
  jerr.base.output_message = jpeg_silent_output;
  unsigned char* mem = nullptr;
  unsigned long mem_size = 0;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(mem);
    throw Error(Errc::internal, fmt::format("jpeg encode failed: {}", jerr.message));
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &mem, &mem_size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = img.channels;
  cinfo.in_color_space = img.channels == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.row(cinfo.next_scanline));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(mem, mem + mem_size);
  jpeg_destroy_compress(&cinfo);
  std::free(mem);
  return out;
}

Raster decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorMgr jerr{};
  cinfo.err = jpeg_std_error(&jerr.base);
  jerr.base.error_exit = jpeg_error_exit_cb;
  jerr.base.output_message = jpeg_silent_output;
  Raster out;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(Errc::corrupt, fmt::format("jpeg decode failed: {}", jerr.message));
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = Raster(cinfo.output_width, cinfo.output_height, 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.row(cinfo.output_scanline);
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_image(const Raster& img, TileCodec codec, int jpeg_quality) {
  if (img.empty()) throw Error(Errc::validation, "cannot encode an empty raster");
  return codec == TileCodec::png ? encode_png(img) : encode_jpeg(img, jpeg_quality);
}

Raster decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes);
  }
  throw Error(Errc::corrupt, "payload is neither PNG nor JPEG");
}

}  // namespace slidestream
