#include "earconv/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>

#include <jpeglib.h>
#include <png.h>

namespace earconv {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) {
      std::fclose(f);
    }
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode, bool decode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    if (decode) {
      throw DecodeError("cannot open image '" + path + "'");
    }
    throw Error("cannot open '" + path + "' for writing");
  }
  return f;
}

// libjpeg reports errors through longjmp; translate them to DecodeError.
struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

ImageU8 read_jpeg(std::FILE* f, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("cannot decode JPEG '" + path + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  ImageU8 img;
  img.h = static_cast<int>(cinfo.output_height);
  img.w = static_cast<int>(cinfo.output_width);
  img.data.resize(static_cast<std::size_t>(img.h) * img.w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.data.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) * img.w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

ImageU8 read_png(std::FILE* f, const std::string& path) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("cannot decode PNG '" + path + "'");
  }
  std::vector<png_bytep> rows;
  ImageU8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("cannot decode PNG '" + path + "'");
  }
  png_init_io(png, f);
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB: expand palettes and low-depth gray,
  // strip 16-bit depth and alpha, replicate gray to three channels.
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
  }
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.h = static_cast<int>(png_get_image_height(png, info));
  img.w = static_cast<int>(png_get_image_width(png, info));
  if (png_get_rowbytes(png, info) !=
      static_cast<std::size_t>(img.w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("unsupported PNG layout in '" + path + "'");
  }
  img.data.resize(static_cast<std::size_t>(img.h) * img.w * 3);
  rows.resize(static_cast<std::size_t>(img.h));
  for (int y = 0; y < img.h; ++y) {
    rows[static_cast<std::size_t>(y)] =
        img.data.data() + static_cast<std::size_t>(y) * img.w * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
  FilePtr f = open_file(path, "rb", /*decode=*/true);
  unsigned char sig[8] = {0};
  const std::size_t got = std::fread(sig, 1, sizeof(sig), f.get());
  std::rewind(f.get());
  if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) {
    return read_png(f.get(), path);
  }
  if (got >= 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) {
    return read_jpeg(f.get(), path);
  }
  throw DecodeError("'" + path + "' is neither PNG nor JPEG");
}

namespace {

void write_png_impl(const std::string& path, int h, int w, int channels,
                    const std::uint8_t* pixels) {
  FilePtr f = open_file(path, "wb", /*decode=*/false);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw Error("cannot write PNG '" + path + "'");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("cannot write PNG '" + path + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        pixels + static_cast<std::size_t>(y) * w * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb(const std::string& path, const ImageU8& image) {
  if (image.data.size() != static_cast<std::size_t>(image.h) * image.w * 3) {
    throw ShapeError("image buffer does not match its extents");
  }
  write_png_impl(path, image.h, image.w, 3, image.data.data());
}

void write_png_gray(const std::string& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("pixel buffer does not match its extents");
  }
  write_png_impl(path, h, w, 1, pixels.data());
}

void write_jpeg_rgb(const std::string& path, const ImageU8& image,
                    int quality) {
  if (image.data.size() != static_cast<std::size_t>(image.h) * image.w * 3) {
    throw ShapeError("image buffer does not match its extents");
  }
  FilePtr f = open_file(path, "wb", /*decode=*/false);
  jpeg_compress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw Error("cannot write JPEG '" + path + "'");
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f.get());
  cinfo.image_width = static_cast<JDIMENSION>(image.w);
  cinfo.image_height = static_cast<JDIMENSION>(image.h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(
        image.data.data() +
        static_cast<std::size_t>(cinfo.next_scanline) * image.w * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

}  // namespace earconv
