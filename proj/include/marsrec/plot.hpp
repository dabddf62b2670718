#pragma once

#include <string>
#include <vector>

#include "marsrec/tensor.hpp"

namespace marsrec {

struct PlotSeries {
  std::string label;
  std::vector<double> x;  // empty means 1..n
  std::vector<double> y;
};

// Line chart rendered to an RGB canvas [3,H,W] in [0,1]. Deterministic:
// equal inputs produce equal pixels.
Tensor<float> render_line_chart(const std::string& title, const std::string& x_label,
                                const std::string& y_label,
                                const std::vector<PlotSeries>& series, int width = 900,
                                int height = 560);

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<PlotSeries>& series, int width = 900, int height = 560);

}  // namespace marsrec
