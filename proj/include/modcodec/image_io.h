#pragma once

#include <string>
#include <vector>

#include "modcodec/image.h"

namespace modcodec {

struct LoadedImage {
  Image image;
  uint32_t num_color_channels = 3;  // 1 or 3; any further channel is alpha
  std::vector<std::string> warnings;
};

// Reads PNG (gray, gray+alpha, RGB, RGBA; palette and sub-byte gray are
// expanded to 8-bit), PNM (P2/P3/P5/P6) or PAM (P7 with 1, 2, 3 or 4
// samples per pixel). The format comes from the file's magic bytes, not the
// extension. PNM/PAM maxval and the PNG sBIT chunk set the image bit depth.
LoadedImage load_image(const std::string& path);

// Writes by extension: .png, .pgm, .ppm, .pnm (no alpha) or .pam.
void save_image(const Image& image, uint32_t num_color_channels,
                const std::string& path);

// In-memory PNG encoding with libpng defaults, also used as the benchmark
// baseline. Supports 8- and 16-bit gray, gray+alpha, RGB and RGBA.
std::vector<uint8_t> encode_png_bytes(const Image& image,
                                      uint32_t num_color_channels);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace modcodec
