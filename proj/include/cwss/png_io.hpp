#pragma once

#include <string>

#include "cwss/tensor.hpp"

namespace cwss {

// 8-bit PNG I/O. Values map linearly between bytes and [0,1] floats.
Tensor read_png_rgb(const std::string& path);                    // -> [3,H,W]
void write_png_rgb(const std::string& path, const Tensor& img);  // [3,H,W] in [0,1]
Tensor read_png_gray(const std::string& path);                   // -> [H,W]
void write_png_gray(const std::string& path, const Tensor& map); // [H,W] in [0,1]

// Raw byte variants for class-index masks (no [0,1] scaling).
Tensor read_png_gray_raw(const std::string& path);                   // values 0..255
void write_png_gray_raw(const std::string& path, const Tensor& map); // values 0..255

}  // namespace cwss
