#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "marsrec/autodiff/graph.hpp"
#include "marsrec/rng.hpp"
#include "marsrec/tensor.hpp"

namespace marsrec::testutil {

inline Tensor<double> rand_tensor(const std::vector<int>& shape, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for ops with a kink or clamp there.
inline Tensor<double> rand_tensor_safe(const std::vector<int>& shape, Rng& rng) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) {
    double mag = rng.uniform(0.1, 1.0);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Central finite differences against the analytic gradient of a scalar
// graph, probing a bounded random subset of each leaf's elements.
inline void fd_check(const std::vector<ad::NodePtr<double>>& leaves,
                     const std::function<ad::NodePtr<double>()>& build, double rel_tol = 2e-5,
                     double abs_floor = 1e-7, int max_probe = 40) {
  auto root = build();
  REQUIRE(root->value.size() == 1);
  ad::backward(root);

  std::vector<Tensor<double>> analytic;
  for (auto& l : leaves) {
    analytic.push_back(l->grad_alloc ? l->grad : Tensor<double>(l->value.shape()));
    if (!l->grad_alloc) analytic.back().fill(0.0);
    l->clear_grad();
  }

  Rng rng(987654);
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const int64_t n = leaf->value.size();
    std::vector<int64_t> probes;
    if (n <= max_probe)
      for (int64_t i = 0; i < n; ++i) probes.push_back(i);
    else
      for (int i = 0; i < max_probe; ++i) probes.push_back(static_cast<int64_t>(rng.below(n)));

    for (int64_t idx : probes) {
      const double orig = leaf->value[idx];
      const double h = 1e-6 * std::max(1.0, std::abs(orig));
      leaf->value[idx] = orig + h;
      const double fp = build()->value[0];
      leaf->value[idx] = orig - h;
      const double fm = build()->value[0];
      leaf->value[idx] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = analytic[li][idx];
      const double err = std::abs(fd - an);
      const double tol = rel_tol * std::max({std::abs(fd), std::abs(an), 1.0}) + abs_floor;
      INFO("leaf ", li, " idx ", idx, " analytic ", an, " fd ", fd);
      CHECK(err <= tol);
    }
  }
}

}  // namespace marsrec::testutil
