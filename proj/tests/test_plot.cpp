#include "marsrec/plot.hpp"

#include <doctest.h>

#include <cmath>

#include "marsrec/image.hpp"

using namespace marsrec;

namespace {

int count_color(const Tensor<float>& img, float r, float g, float b) {
  const int h = img.dim(1), w = img.dim(2);
  int n = 0;
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
    if (std::abs(img[p] - r) < 1e-4 && std::abs(img[static_cast<int64_t>(h) * w + p] - g) < 1e-4 &&
        std::abs(img[2LL * h * w + p] - b) < 1e-4)
      ++n;
  return n;
}

double mean_row_of_color(const Tensor<float>& img, float r, float g, float b) {
  const int h = img.dim(1), w = img.dim(2);
  double acc = 0;
  int n = 0;
  for (int row = 0; row < h; ++row)
    for (int col = 0; col < w; ++col) {
      const int64_t p = static_cast<int64_t>(row) * w + col;
      if (std::abs(img[p] - r) < 1e-4 &&
          std::abs(img[static_cast<int64_t>(h) * w + p] - g) < 1e-4 &&
          std::abs(img[2LL * h * w + p] - b) < 1e-4) {
        acc += row;
        ++n;
      }
    }
  REQUIRE(n > 0);
  return acc / n;
}

}  // namespace

TEST_CASE("charts render both series in their palette colors") {
  PlotSeries a{"block 1", {}, {1.0, 0.8, 0.6, 0.5}};
  PlotSeries b{"block 2", {}, {0.4, 0.3, 0.25, 0.2}};
  Tensor<float> img = render_line_chart("losses", "epoch", "loss", {a, b});
  REQUIRE(img.shape() == std::vector<int>({3, 560, 900}));
  CHECK(count_color(img, 0.12f, 0.35f, 0.80f) > 50);
  CHECK(count_color(img, 0.85f, 0.20f, 0.15f) > 50);
  CHECK(img[0] == 1.0f);  // top-left corner stays background white
}

TEST_CASE("larger values plot higher on the canvas") {
  PlotSeries hi{"hi", {}, {0.9, 0.9, 0.9}};
  PlotSeries lo{"lo", {}, {0.1, 0.1, 0.1}};
  Tensor<float> img = render_line_chart("t", "x", "y", {hi, lo});
  const double hi_row = mean_row_of_color(img, 0.12f, 0.35f, 0.80f);
  const double lo_row = mean_row_of_color(img, 0.85f, 0.20f, 0.15f);
  CHECK(hi_row < lo_row);
}

TEST_CASE("rendering is deterministic") {
  PlotSeries a{"a", {1, 2, 5}, {0.5, 0.2, 0.9}};
  Tensor<float> x = render_line_chart("t", "x", "y", {a}, 400, 300);
  Tensor<float> y = render_line_chart("t", "x", "y", {a}, 400, 300);
  CHECK(x.vec() == y.vec());
}

TEST_CASE("degenerate chart inputs are rejected") {
  CHECK_THROWS_AS(render_line_chart("t", "x", "y", {}), InputError);
  PlotSeries empty{"e", {}, {}};
  CHECK_THROWS_AS(render_line_chart("t", "x", "y", {empty}), InputError);
  PlotSeries bad{"b", {1.0}, {0.5, 0.7}};
  CHECK_THROWS_AS(render_line_chart("t", "x", "y", {bad}), InputError);
  PlotSeries ok{"o", {}, {0.5}};
  CHECK_THROWS_AS(render_line_chart("t", "x", "y", {ok}, 50, 50), InputError);
  CHECK_NOTHROW(render_line_chart("t", "x", "y", {ok}));
}

TEST_CASE("flat series still render inside the canvas") {
  PlotSeries flat{"f", {}, {0.5, 0.5, 0.5}};
  Tensor<float> img = render_line_chart("t", "x", "y", {flat});
  CHECK(count_color(img, 0.12f, 0.35f, 0.80f) > 50);
}
