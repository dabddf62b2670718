#pragma once

#include <string>

#include "marsrec/tensor.hpp"

namespace marsrec {

// 8-bit grayscale; values are mapped linearly between [0,1] and [0,255].
Tensor<float> read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Tensor<float>& img);

// 8-bit RGB from a [3,H,W] tensor in [0,1]; used by the plotter.
void write_png_rgb(const std::string& path, const Tensor<float>& img);

}  // namespace marsrec
