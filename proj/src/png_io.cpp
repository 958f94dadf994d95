#include "slotkit/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "slotkit/errors.hpp"

namespace slotkit {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail_format(const std::string& path, const char* what) {
  throw FormatError("png " + std::string(what) + ": " + path);
}

}  // namespace

void write_png_rgb(const std::string& path, const RgbImage& img) {
  if (img.rows < 1 || img.cols < 1 || img.px.size() != size_t(img.rows) * img.cols * 3)
    throw ArgumentError("write_png_rgb: malformed image buffer");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail_format(path, "writer init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail_format(path, "write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(img.cols), png_uint_32(img.rows), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.rows; ++r)
    png_write_row(png, const_cast<png_bytep>(img.at(r, 0)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png_rgb(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_format(path, "reader init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_format(path, "decode failed");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  RgbImage img;
  img.rows = int(png_get_image_height(png, info));
  img.cols = int(png_get_image_width(png, info));
  if (png_get_rowbytes(png, info) != size_t(img.cols) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_format(path, "unexpected row size");
  }
  img.px.resize(size_t(img.rows) * img.cols * 3);
  for (int r = 0; r < img.rows; ++r) png_read_row(png, img.at(r, 0), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray16(const std::string& path, const num::Mat<int>& labels) {
  if (labels.rows < 1 || labels.cols < 1)
    throw ArgumentError("write_png_gray16: empty label map");
  for (int v : labels.v)
    if (v < 0 || v > 0xffff) throw ArgumentError("write_png_gray16: label out of u16 range");
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail_format(path, "writer init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail_format(path, "write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(labels.cols), png_uint_32(labels.rows), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(size_t(labels.cols) * 2);
  for (int r = 0; r < labels.rows; ++r) {
    for (int c = 0; c < labels.cols; ++c) {
      int v = labels.at(r, c);
      row[size_t(c) * 2] = uint8_t(v >> 8);  // network byte order per PNG spec
      row[size_t(c) * 2 + 1] = uint8_t(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

num::Mat<int> read_png_gray16(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_format(path, "reader init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_format(path, "decode failed");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
      png_get_bit_depth(png, info) != 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_format(path, "expected 16-bit grayscale");
  }
  int rows = int(png_get_image_height(png, info));
  int cols = int(png_get_image_width(png, info));
  num::Mat<int> labels(rows, cols);
  std::vector<uint8_t> row(size_t(cols) * 2);
  for (int r = 0; r < rows; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < cols; ++c)
      labels.at(r, c) = (int(row[size_t(c) * 2]) << 8) | int(row[size_t(c) * 2 + 1]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return labels;
}

}  // namespace slotkit
