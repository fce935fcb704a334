#include "cwss/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

namespace cwss {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(float v) {
  float scaled = std::round(v * 255.0f);
  return static_cast<unsigned char>(std::clamp(scaled, 0.0f, 255.0f));
}

std::vector<std::vector<unsigned char>> read_rows(const std::string& path, int& width,
                                                  int& height, int& channels) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open PNG for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("malformed PNG: " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  channels = static_cast<int>(png_get_channels(png, info));
  std::vector<std::vector<unsigned char>> rows(static_cast<size_t>(height));
  std::vector<png_bytep> ptrs(static_cast<size_t>(height));
  size_t rowbytes = png_get_rowbytes(png, info);
  for (int y = 0; y < height; ++y) {
    rows[static_cast<size_t>(y)].resize(rowbytes);
    ptrs[static_cast<size_t>(y)] = rows[static_cast<size_t>(y)].data();
  }
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return rows;
}

void write_rows(const std::string& path, int width, int height, int color_type,
                const std::vector<std::vector<unsigned char>>& rows) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open PNG for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> ptrs(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    ptrs[static_cast<size_t>(y)] = const_cast<png_bytep>(rows[static_cast<size_t>(y)].data());
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor read_png_rgb(const std::string& path) {
  int w = 0, h = 0, ch = 0;
  auto rows = read_rows(path, w, h, ch);
  if (ch != 3 && ch != 1) throw DataError("unsupported channel count in " + path);
  Tensor img({3, h, w});
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = rows[static_cast<size_t>(y)].data();
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<float>(row[x * ch + (ch == 3 ? c : 0)]) / 255.0f;
  }
  return img;
}

void write_png_rgb(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("write_png_rgb expects [3,H,W], got " + shape_str(img.shape));
  int h = img.dim(1), w = img.dim(2);
  std::vector<std::vector<unsigned char>> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<size_t>(y)].resize(static_cast<size_t>(w) * 3);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
            to_byte(img.at(c, y, x));
  }
  write_rows(path, w, h, PNG_COLOR_TYPE_RGB, rows);
}

Tensor read_png_gray(const std::string& path) {
  Tensor raw = read_png_gray_raw(path);
  for (float& v : raw.data) v /= 255.0f;
  return raw;
}

void write_png_gray(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_png_gray expects [H,W]");
  Tensor scaled(map.shape);
  for (size_t i = 0; i < map.data.size(); ++i)
    scaled.data[i] = static_cast<float>(to_byte(map.data[i]));
  write_png_gray_raw(path, scaled);
}

Tensor read_png_gray_raw(const std::string& path) {
  int w = 0, h = 0, ch = 0;
  auto rows = read_rows(path, w, h, ch);
  Tensor map({h, w});
  for (int y = 0; y < h; ++y) {
    const unsigned char* row = rows[static_cast<size_t>(y)].data();
    for (int x = 0; x < w; ++x) map.at(y, x) = static_cast<float>(row[x * ch]);
  }
  return map;
}

void write_png_gray_raw(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_png_gray_raw expects [H,W]");
  int h = map.dim(0), w = map.dim(1);
  std::vector<std::vector<unsigned char>> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) {
    rows[static_cast<size_t>(y)].resize(static_cast<size_t>(w));
    for (int x = 0; x < w; ++x) {
      float v = std::clamp(map.at(y, x), 0.0f, 255.0f);
      rows[static_cast<size_t>(y)][static_cast<size_t>(x)] =
          static_cast<unsigned char>(std::lround(v));
    }
  }
  write_rows(path, w, h, PNG_COLOR_TYPE_GRAY, rows);
}

}  // namespace cwss
