#pragma once
// Minimal PNG IO: 8-bit RGB images and 16-bit grayscale label maps.

#include <cstdint>
#include <string>
#include <vector>

#include "slotkit/mat.hpp"

namespace slotkit {

struct RgbImage {
  int rows = 0, cols = 0;
  std::vector<uint8_t> px;  // rows*cols*3, row-major RGB

  uint8_t* at(int r, int c) { return px.data() + (size_t(r) * cols + c) * 3; }
  const uint8_t* at(int r, int c) const { return px.data() + (size_t(r) * cols + c) * 3; }
};

void write_png_rgb(const std::string& path, const RgbImage& img);
RgbImage read_png_rgb(const std::string& path);

// label maps: 16-bit single-channel, value = label id
void write_png_gray16(const std::string& path, const num::Mat<int>& labels);
num::Mat<int> read_png_gray16(const std::string& path);

}  // namespace slotkit
