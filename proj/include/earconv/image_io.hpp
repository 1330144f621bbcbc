#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earconv/error.hpp"

namespace earconv {

/// 8-bit interleaved RGB image.
struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;  // h * w * 3
};

/// Decodes a PNG or JPEG file (sniffed by magic bytes) to RGB. Grayscale
/// is replicated across channels and alpha is dropped. Throws DecodeError
/// carrying the path.
ImageU8 read_image(const std::string& path);

void write_png_rgb(const std::string& path, const ImageU8& image);
void write_png_gray(const std::string& path, int h, int w,
                    const std::vector<std::uint8_t>& pixels);
void write_jpeg_rgb(const std::string& path, const ImageU8& image,
                    int quality = 90);

}  // namespace earconv
