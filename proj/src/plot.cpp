#include "marsrec/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>

#include "marsrec/image.hpp"
#include "marsrec/png_io.hpp"

namespace marsrec {
namespace {

// 5x7 glyphs, one byte per row, low 5 bits used (bit 4 = leftmost column).
struct Glyph {
  char ch;
  uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110}},
    {'1', {0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'2', {0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111}},
    {'3', {0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110}},
    {'4', {0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010}},
    {'5', {0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110}},
    {'6', {0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110}},
    {'7', {0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000}},
    {'8', {0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110}},
    {'9', {0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100}},
    {'a', {0b00000, 0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111}},
    {'b', {0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b11110}},
    {'c', {0b00000, 0b00000, 0b01110, 0b10000, 0b10000, 0b10001, 0b01110}},
    {'d', {0b00001, 0b00001, 0b01101, 0b10011, 0b10001, 0b10001, 0b01111}},
    {'e', {0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110}},
    {'f', {0b00110, 0b01001, 0b01000, 0b11100, 0b01000, 0b01000, 0b01000}},
    {'g', {0b00000, 0b01111, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110}},
    {'h', {0b10000, 0b10000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001}},
    {'i', {0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'j', {0b00010, 0b00000, 0b00110, 0b00010, 0b00010, 0b10010, 0b01100}},
    {'k', {0b10000, 0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010}},
    {'l', {0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110}},
    {'m', {0b00000, 0b00000, 0b11010, 0b10101, 0b10101, 0b10101, 0b10101}},
    {'n', {0b00000, 0b00000, 0b10110, 0b11001, 0b10001, 0b10001, 0b10001}},
    {'o', {0b00000, 0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110}},
    {'p', {0b00000, 0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000}},
    {'q', {0b00000, 0b00000, 0b01111, 0b10001, 0b01111, 0b00001, 0b00001}},
    {'r', {0b00000, 0b00000, 0b10110, 0b11001, 0b10000, 0b10000, 0b10000}},
    {'s', {0b00000, 0b00000, 0b01111, 0b10000, 0b01110, 0b00001, 0b11110}},
    {'t', {0b01000, 0b01000, 0b11100, 0b01000, 0b01000, 0b01001, 0b00110}},
    {'u', {0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101}},
    {'v', {0b00000, 0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100}},
    {'w', {0b00000, 0b00000, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010}},
    {'x', {0b00000, 0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001}},
    {'y', {0b00000, 0b00000, 0b10001, 0b10001, 0b01111, 0b00001, 0b01110}},
    {'z', {0b00000, 0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111}},
    {'.', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100}},
    {',', {0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000}},
    {'-', {0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000}},
    {'+', {0b00000, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0b00000}},
    {'_', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b11111}},
    {':', {0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000}},
    {'/', {0b00001, 0b00010, 0b00100, 0b00100, 0b01000, 0b10000, 0b00000}},
    {'%', {0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011}},
    {'(', {0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010}},
    {')', {0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000}},
    {'=', {0b00000, 0b00000, 0b11111, 0b00000, 0b11111, 0b00000, 0b00000}},
    {' ', {0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00000}},
};

const Glyph* find_glyph(char ch) {
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (const auto& g : kFont)
    if (g.ch == c) return &g;
  return nullptr;
}

struct Color {
  float r, g, b;
};

constexpr Color kPalette[] = {
    {0.12f, 0.35f, 0.80f}, {0.85f, 0.20f, 0.15f}, {0.10f, 0.60f, 0.25f},
    {0.95f, 0.60f, 0.05f}, {0.50f, 0.20f, 0.70f}, {0.05f, 0.60f, 0.65f},
};
constexpr int kPaletteSize = 6;
constexpr Color kBlack{0.05f, 0.05f, 0.05f};
constexpr Color kGrid{0.88f, 0.88f, 0.88f};

class Canvas {
 public:
  Canvas(int h, int w) : img_({3, h, w}), h_(h), w_(w) { img_.fill(1.0f); }

  void set(int r, int c, const Color& col) {
    if (r < 0 || r >= h_ || c < 0 || c >= w_) return;
    const int64_t p = static_cast<int64_t>(r) * w_ + c;
    img_[p] = col.r;
    img_[static_cast<int64_t>(h_) * w_ + p] = col.g;
    img_[2LL * h_ * w_ + p] = col.b;
  }

  void block(int r, int c, int size, const Color& col) {
    for (int dr = 0; dr < size; ++dr)
      for (int dc = 0; dc < size; ++dc) set(r + dr, c + dc, col);
  }

  void line(double r0, double c0, double r1, double c1, const Color& col, int thick = 2) {
    const double steps = std::max({std::abs(r1 - r0), std::abs(c1 - c0), 1.0}) * 2.0;
    for (int s = 0; s <= static_cast<int>(steps); ++s) {
      const double t = s / steps;
      block(static_cast<int>(std::lround(r0 + (r1 - r0) * t)) - thick / 2,
            static_cast<int>(std::lround(c0 + (c1 - c0) * t)) - thick / 2, thick, col);
    }
  }

  // Returns the column just past the rendered text.
  int text(int r, int c, const std::string& s, const Color& col, int scale = 1) {
    for (char ch : s) {
      const Glyph* g = find_glyph(ch);
      if (g) {
        for (int gr = 0; gr < 7; ++gr)
          for (int gc = 0; gc < 5; ++gc)
            if (g->rows[gr] & (1 << (4 - gc))) block(r + gr * scale, c + gc * scale, scale, col);
      }
      c += 6 * scale;
    }
    return c;
  }

  Tensor<float> take() { return std::move(img_); }

 private:
  Tensor<float> img_;
  int h_, w_;
};

std::string tick_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

Tensor<float> render_line_chart(const std::string& title, const std::string& x_label,
                                const std::string& y_label,
                                const std::vector<PlotSeries>& series, int width, int height) {
  if (series.empty()) throw InputError("render_line_chart: no series");
  if (width < 200 || height < 150) throw InputError("render_line_chart: canvas too small");
  for (const auto& s : series) {
    if (s.y.empty()) throw InputError("render_line_chart: empty series '" + s.label + "'");
    if (!s.x.empty() && s.x.size() != s.y.size())
      throw InputError("render_line_chart: x/y size mismatch in '" + s.label + "'");
  }

  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.y.size(); ++i) {
      const double xv = s.x.empty() ? static_cast<double>(i + 1) : s.x[i];
      x_lo = std::min(x_lo, xv);
      x_hi = std::max(x_hi, xv);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  if (x_hi - x_lo < 1e-12) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  if (y_hi - y_lo < 1e-12) {
    y_lo -= 0.5;
    y_hi += 0.5;
  }
  const double y_pad = (y_hi - y_lo) * 0.05;
  y_lo -= y_pad;
  y_hi += y_pad;

  const int top = 34, bottom = height - 40, left = 64, right = width - 16;
  Canvas cv(height, width);

  const auto col_of = [&](double xv) {
    return left + (xv - x_lo) / (x_hi - x_lo) * (right - left);
  };
  const auto row_of = [&](double yv) {
    return bottom - (yv - y_lo) / (y_hi - y_lo) * (bottom - top);
  };

  for (int k = 0; k <= 5; ++k) {  // grid and ticks
    const double yv = y_lo + (y_hi - y_lo) * k / 5.0;
    const int r = static_cast<int>(std::lround(row_of(yv)));
    cv.line(r, left, r, right, kGrid, 1);
    cv.text(r - 3, 6, tick_text(yv), kBlack);
    const double xv = x_lo + (x_hi - x_lo) * k / 5.0;
    const int c = static_cast<int>(std::lround(col_of(xv)));
    cv.line(top, c, bottom, c, kGrid, 1);
    cv.text(bottom + 8, c - 8, tick_text(xv), kBlack);
  }
  cv.line(top, left, bottom, left, kBlack, 2);
  cv.line(bottom, left, bottom, right, kBlack, 2);
  cv.text(8, left, title, kBlack, 2);
  cv.text(height - 16, (left + right) / 2 - 3 * static_cast<int>(x_label.size()), x_label,
          kBlack);
  cv.text(20, 6, y_label, kBlack);

  int legend_r = top + 8;
  for (size_t si = 0; si < series.size(); ++si) {
    const Color col = kPalette[si % kPaletteSize];
    const auto& s = series[si];
    for (size_t i = 0; i + 1 < s.y.size(); ++i) {
      const double x0 = s.x.empty() ? static_cast<double>(i + 1) : s.x[i];
      const double x1 = s.x.empty() ? static_cast<double>(i + 2) : s.x[i + 1];
      cv.line(row_of(s.y[i]), col_of(x0), row_of(s.y[i + 1]), col_of(x1), col, 2);
    }
    if (s.y.size() == 1) cv.block(static_cast<int>(row_of(s.y[0])) - 2, static_cast<int>(col_of(s.x.empty() ? 1.0 : s.x[0])) - 2, 5, col);
    cv.block(legend_r, right - 150, 8, col);
    cv.text(legend_r, right - 138, s.label, kBlack);
    legend_r += 14;
  }
  return cv.take();
}

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<PlotSeries>& series, int width, int height) {
  write_png_rgb(path, render_line_chart(title, x_label, y_label, series, width, height));
}

}  // namespace marsrec
