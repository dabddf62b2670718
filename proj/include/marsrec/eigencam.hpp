#pragma once

#include <Eigen/Dense>
#include <cstdio>

#include "marsrec/image.hpp"
#include "marsrec/tensor.hpp"

namespace marsrec {

// Activation heatmap: the first right singular vector of the [C, H*W]
// activation matrix, sign-resolved toward a non-negative mean, min-max
// normalized to [0,1] and reshaped to [H,W]. All-zero input degrades to a
// uniform zero map with a warning.
template <class T>
Tensor<T> eigencam(const Tensor<T>& activations) {
  if (activations.rank() != 3) throw InputError("eigencam: expected [C,H,W] activations");
  const int C = activations.dim(0), H = activations.dim(1), W = activations.dim(2);
  const int P = H * W;

  Tensor<T> heat({H, W});
  bool any = false;
  for (int64_t i = 0; i < activations.size(); ++i)
    if (activations[i] != T(0)) {
      any = true;
      break;
    }
  if (!any) {
    std::fprintf(stderr, "warning: all-zero activations, eigencam heatmap is uniform zero\n");
    heat.fill(T(0));
    return heat;
  }

  Eigen::MatrixXd m(C, P);
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < P; ++p) m(c, p) = static_cast<double>(activations[static_cast<int64_t>(c) * P + p]);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
  Eigen::VectorXd v = svd.matrixV().col(0);
  if (v.mean() < 0) v = -v;

  const double lo = v.minCoeff(), hi = v.maxCoeff();
  if (hi - lo < 1e-12) {
    heat.fill(T(0));
    return heat;
  }
  for (int p = 0; p < P; ++p) heat[p] = static_cast<T>((v[p] - lo) / (hi - lo));
  return heat;
}

template <class T>
Tensor<T> eigencam(const Tensor<T>& activations, int out_h, int out_w) {
  return resize_bilinear(eigencam(activations), out_h, out_w);
}

}  // namespace marsrec
