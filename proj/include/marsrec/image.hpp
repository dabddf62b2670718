#pragma once

#include <algorithm>
#include <cmath>

#include "marsrec/tensor.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec {

using Image = Tensor<float>;  // [H,W], values in [0,1]

// Align-corners bilinear resize; for a 1-pixel axis the single source
// value is replicated.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, int out_h, int out_w) {
  if (img.rank() != 2) throw InputError("resize_bilinear: expected [H,W]");
  if (out_h < 1 || out_w < 1) throw InputError("resize_bilinear: output dims must be >= 1");
  const int h = img.dim(0), w = img.dim(1);
  Tensor<T> out({out_h, out_w});
  const double sr = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sc = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c)
      out.at(r, c) = detail::bilinear_read(img.data(), h, w, r * sr, c * sc);
  return out;
}

// Crop [y, y+ch) x [x, x+cw) after clipping the box to the image bounds.
// Throws if the clipped box is empty.
template <class T>
Tensor<T> crop_clipped(const Tensor<T>& img, int x, int y, int cw, int ch) {
  if (img.rank() != 2) throw InputError("crop_clipped: expected [H,W]");
  const int h = img.dim(0), w = img.dim(1);
  int x0 = std::max(0, x), y0 = std::max(0, y);
  int x1 = std::min(w, x + cw), y1 = std::min(h, y + ch);
  if (x0 >= x1 || y0 >= y1) throw InputError("crop_clipped: box does not intersect image");
  Tensor<T> out({y1 - y0, x1 - x0});
  for (int r = y0; r < y1; ++r)
    for (int c = x0; c < x1; ++c) out.at(r - y0, c - x0) = img.at(r, c);
  return out;
}

template <class T>
void clamp01(Tensor<T>& img) {
  for (int64_t i = 0; i < img.size(); ++i)
    img[i] = std::min(T(1), std::max(T(0), img[i]));
}

}  // namespace marsrec
