#pragma once

#include <memory>

#include "marsrec/autodiff/ops.hpp"

namespace marsrec::ad {

// Per-sample rigid warp of [B,C,H,W] activations, zero fill outside the
// support. Brightness components of the specs are ignored; warping
// attention maps is a purely geometric operation.
template <class T>
NodePtr<T> warp_views(const NodePtr<T>& x, const std::vector<TransformSpec>& specs) {
  if (x->value.rank() != 4) throw std::invalid_argument("warp_views: need [B,C,H,W]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (static_cast<int>(specs.size()) != B)
    throw std::invalid_argument("warp_views: one spec per batch row required");
  const int P = H * W;

  // taps[b] is empty for identity rows (plain copy).
  struct SampleTaps {
    std::vector<int32_t> idx;  // 4 per pixel, -1 outside
    std::vector<float> w;
  };
  auto taps = std::make_shared<std::vector<SampleTaps>>(B);

  Tensor<T> out(x->value.shape());
  for (int b = 0; b < B; ++b) {
    if (specs[b].geometric_identity()) {
      const T* src = x->value.data() + static_cast<int64_t>(b) * C * P;
      std::copy(src, src + static_cast<int64_t>(C) * P, out.data() + static_cast<int64_t>(b) * C * P);
      continue;
    }
    auto& st = (*taps)[b];
    st.idx.assign(static_cast<size_t>(P) * 4, -1);
    st.w.assign(static_cast<size_t>(P) * 4, 0.f);
    const marsrec::detail::GeomMap map(specs[b], H, W);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const int p = r * W + c;
        double sr, sc;
        map.src(r, c, sr, sc);
        const int r0 = static_cast<int>(std::floor(sr));
        const int c0 = static_cast<int>(std::floor(sc));
        const double fr = sr - r0, fc = sc - c0;
        const double ww[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
        const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
        const int cc[4] = {c0, c0 + 1, c0, c0 + 1};
        for (int j = 0; j < 4; ++j) {
          if (ww[j] <= 0.0 || rr[j] < 0 || rr[j] >= H || cc[j] < 0 || cc[j] >= W) continue;
          st.idx[static_cast<size_t>(p) * 4 + j] = rr[j] * W + cc[j];
          st.w[static_cast<size_t>(p) * 4 + j] = static_cast<float>(ww[j]);
        }
      }
    for (int ch = 0; ch < C; ++ch) {
      const T* plane = x->value.data() + (static_cast<int64_t>(b) * C + ch) * P;
      T* dst = out.data() + (static_cast<int64_t>(b) * C + ch) * P;
      for (int p = 0; p < P; ++p) {
        T acc = T(0);
        const size_t e = static_cast<size_t>(p) * 4;
        for (int j = 0; j < 4; ++j) {
          const int32_t ti = st.idx[e + j];
          if (ti >= 0) acc += static_cast<T>(st.w[e + j]) * plane[ti];
        }
        dst[p] = acc;
      }
    }
  }

  return make_op<T>(std::move(out), {x}, [x, taps, B, C, P](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (int b = 0; b < B; ++b) {
      const auto& st = (*taps)[b];
      if (st.idx.empty()) {
        const T* g = n.grad.data() + static_cast<int64_t>(b) * C * P;
        T* dst = gx.data() + static_cast<int64_t>(b) * C * P;
        for (int64_t i = 0; i < static_cast<int64_t>(C) * P; ++i) dst[i] += g[i];
        continue;
      }
      for (int ch = 0; ch < C; ++ch) {
        const T* g = n.grad.data() + (static_cast<int64_t>(b) * C + ch) * P;
        T* plane = gx.data() + (static_cast<int64_t>(b) * C + ch) * P;
        for (int p = 0; p < P; ++p) {
          const T gv = g[p];
          if (gv == T(0)) continue;
          const size_t e = static_cast<size_t>(p) * 4;
          for (int j = 0; j < 4; ++j) {
            const int32_t ti = st.idx[e + j];
            if (ti >= 0) plane[ti] += static_cast<T>(st.w[e + j]) * gv;
          }
        }
      }
    }
  });
}

}  // namespace marsrec::ad
