#pragma once

#include <cmath>
#include <memory>

#include "marsrec/autodiff/ops.hpp"

namespace marsrec::ad {

enum class ConvKind { standard, ric };

// Precomputed sampling pattern of one conv geometry. Every (kernel slot m,
// output pixel p) pair reads up to 4 input-plane positions; idx -1 means
// the tap falls outside and contributes zero. Standard convolution uses a
// single integer tap; the rotated-grid variant uses bilinear taps on a
// k x k grid turned by the polar angle of the output anchor about the
// input-map center (the exact center keeps the axis-aligned grid).
struct ConvTaps {
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  int k = 0, stride = 1, pad = 0;
  int slots = 1;  // taps stored per (m, p)
  std::vector<int32_t> idx;
  std::vector<float> w;

  int64_t entry(int m, int p) const {
    return (static_cast<int64_t>(m) * out_h * out_w + p) * slots;
  }
};

inline std::shared_ptr<ConvTaps> build_conv_taps(ConvKind kind, int in_h, int in_w, int k,
                                                 int stride, int pad) {
  if (k % 2 == 0) throw ConfigError("conv: kernel size must be odd");
  if (stride < 1 || pad < 0) throw ConfigError("conv: bad stride/pad");
  auto taps = std::make_shared<ConvTaps>();
  taps->in_h = in_h;
  taps->in_w = in_w;
  taps->k = k;
  taps->stride = stride;
  taps->pad = pad;
  taps->out_h = (in_h + 2 * pad - k) / stride + 1;
  taps->out_w = (in_w + 2 * pad - k) / stride + 1;
  if (taps->out_h < 1 || taps->out_w < 1) throw ConfigError("conv: output would be empty");
  const int P = taps->out_h * taps->out_w;
  const int k2 = k * k;
  const int kc0 = (k - 1) / 2;

  taps->slots = kind == ConvKind::standard ? 1 : 4;
  taps->idx.assign(static_cast<size_t>(k2) * P * taps->slots, -1);
  taps->w.assign(static_cast<size_t>(k2) * P * taps->slots, 0.f);

  const double cy = (in_h - 1) * 0.5, cx = (in_w - 1) * 0.5;
  for (int orow = 0; orow < taps->out_h; ++orow)
    for (int ocol = 0; ocol < taps->out_w; ++ocol) {
      const int p = orow * taps->out_w + ocol;
      const double ar = orow * stride - pad + kc0;
      const double ac = ocol * stride - pad + kc0;
      double cos_f = 1.0, sin_f = 0.0;
      if (kind == ConvKind::ric) {
        const double dr = ar - cy, dc = ac - cx;
        if (std::abs(dr) > 1e-9 || std::abs(dc) > 1e-9) {
          const double phi = std::atan2(dc, dr);
          cos_f = std::cos(phi);
          sin_f = std::sin(phi);
        }
      }
      for (int kr = 0; kr < k; ++kr)
        for (int kc = 0; kc < k; ++kc) {
          const int m = kr * k + kc;
          const int64_t e = taps->entry(m, p);
          if (kind == ConvKind::standard) {
            const int ir = orow * stride - pad + kr;
            const int ic = ocol * stride - pad + kc;
            if (ir >= 0 && ir < in_h && ic >= 0 && ic < in_w) {
              taps->idx[e] = ir * in_w + ic;
              taps->w[e] = 1.f;
            }
          } else {
            const double orr = kr - kc0, occ = kc - kc0;
            const double rr = orr * cos_f - occ * sin_f;
            const double rc = orr * sin_f + occ * cos_f;
            const double sr = ar + rr, sc = ac + rc;
            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;
            const double ww[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
            const int rr4[4] = {r0, r0, r0 + 1, r0 + 1};
            const int cc4[4] = {c0, c0 + 1, c0, c0 + 1};
            for (int j = 0; j < 4; ++j) {
              if (ww[j] <= 0.0) continue;
              if (rr4[j] < 0 || rr4[j] >= in_h || cc4[j] < 0 || cc4[j] >= in_w) continue;
              taps->idx[e + j] = rr4[j] * in_w + cc4[j];
              taps->w[e + j] = static_cast<float>(ww[j]);
            }
          }
        }
    }
  return taps;
}

// x [B,C,H,W], weight [O,C/g,k,k], bias [O] or null.
template <class T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& weight, const std::type_identity_t<NodePtr<T>>& bias,
                  const std::shared_ptr<ConvTaps>& taps, int groups) {
  if (x->value.rank() != 4 || weight->value.rank() != 4)
    throw std::invalid_argument("conv2d: need x [B,C,H,W], weight [O,Cg,k,k]");
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int O = weight->value.dim(0), Cg = weight->value.dim(1), k = weight->value.dim(2);
  if (weight->value.dim(3) != k || k != taps->k) throw std::invalid_argument("conv2d: kernel mismatch");
  if (groups < 1 || C % groups != 0 || O % groups != 0 || Cg != C / groups)
    throw ConfigError("conv2d: channels not divisible by groups");
  if (x->value.dim(2) != taps->in_h || x->value.dim(3) != taps->in_w)
    throw std::invalid_argument("conv2d: input resolution does not match tap table");
  if (bias && bias->value.size() != O) throw std::invalid_argument("conv2d: bias must be [O]");

  const int Og = O / groups;
  const int P = taps->out_h * taps->out_w;
  const int k2 = k * k;
  const int64_t HW = static_cast<int64_t>(taps->in_h) * taps->in_w;
  const int rows = Cg * k2;
  const int64_t cols = static_cast<int64_t>(B) * P;

  // Gather buffers are kept alive for the backward GEMMs only when a
  // gradient will actually flow.
  const bool needs_tape = x->requires_grad || weight->requires_grad || (bias && bias->requires_grad);
  auto cols_cache = std::make_shared<std::vector<EMat<T>>>();
  if (needs_tape) cols_cache->reserve(groups);

  Tensor<T> out({B, O, taps->out_h, taps->out_w});
  for (int g = 0; g < groups; ++g) {
    EMat<T> col(rows, cols);
    for (int cl = 0; cl < Cg; ++cl) {
      const int c = g * Cg + cl;
      for (int m = 0; m < k2; ++m) {
        T* crow = col.data() + static_cast<int64_t>(cl * k2 + m) * cols;
        for (int b = 0; b < B; ++b) {
          const T* plane = x->value.data() + (static_cast<int64_t>(b) * C + c) * HW;
          T* dst = crow + static_cast<int64_t>(b) * P;
          for (int p = 0; p < P; ++p) {
            const int64_t e = taps->entry(m, p);
            T acc = T(0);
            for (int j = 0; j < taps->slots; ++j) {
              const int32_t ti = taps->idx[e + j];
              if (ti >= 0) acc += static_cast<T>(taps->w[e + j]) * plane[ti];
            }
            dst[p] = acc;
          }
        }
      }
    }
    ECMap<T> wg(weight->value.data() + static_cast<int64_t>(g) * Og * rows, Og, rows);
    // One product per sample: identical input rows then produce bitwise
    // identical output rows regardless of their position in the batch.
    EMat<T> y(Og, cols);
    for (int b = 0; b < B; ++b)
      y.middleCols(static_cast<int64_t>(b) * P, P).noalias() =
          wg * col.middleCols(static_cast<int64_t>(b) * P, P);
    for (int og = 0; og < Og; ++og) {
      const int o = g * Og + og;
      for (int b = 0; b < B; ++b) {
        const T* src = y.data() + static_cast<int64_t>(og) * cols + static_cast<int64_t>(b) * P;
        T* dst = out.data() + (static_cast<int64_t>(b) * O + o) * P;
        std::copy(src, src + P, dst);
      }
    }
    if (needs_tape) cols_cache->push_back(std::move(col));
  }
  if (bias)
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o) {
        T* dst = out.data() + (static_cast<int64_t>(b) * O + o) * P;
        const T bv = bias->value[o];
        for (int p = 0; p < P; ++p) dst[p] += bv;
      }

  std::vector<NodePtr<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_op<T>(
      std::move(out), std::move(parents),
      [x, weight, bias, taps, groups, B, C, O, Cg, Og, P, k2, HW, rows, cols,
       cols_cache](Node<T>& n) {
        for (int g = 0; g < groups; ++g) {
          EMat<T> gy(Og, cols);
          for (int og = 0; og < Og; ++og) {
            const int o = g * Og + og;
            for (int b = 0; b < B; ++b) {
              const T* src = n.grad.data() + (static_cast<int64_t>(b) * O + o) * P;
              std::copy(src, src + P,
                        gy.data() + static_cast<int64_t>(og) * cols + static_cast<int64_t>(b) * P);
            }
          }
          if (weight->requires_grad) {
            EMap<T> gw(weight->ensure_grad().data() + static_cast<int64_t>(g) * Og * rows, Og, rows);
            gw.noalias() += gy * (*cols_cache)[g].transpose();
          }
          if (x->requires_grad) {
            ECMap<T> wg(weight->value.data() + static_cast<int64_t>(g) * Og * rows, Og, rows);
            EMat<T> gcol(rows, cols);
            for (int b = 0; b < B; ++b)
              gcol.middleCols(static_cast<int64_t>(b) * P, P).noalias() =
                  wg.transpose() * gy.middleCols(static_cast<int64_t>(b) * P, P);
            auto& gx = x->ensure_grad();
            for (int cl = 0; cl < Cg; ++cl) {
              const int c = g * Cg + cl;
              for (int m = 0; m < k2; ++m) {
                const T* crow = gcol.data() + static_cast<int64_t>(cl * k2 + m) * cols;
                for (int b = 0; b < B; ++b) {
                  T* plane = gx.data() + (static_cast<int64_t>(b) * C + c) * HW;
                  const T* src = crow + static_cast<int64_t>(b) * P;
                  for (int p = 0; p < P; ++p) {
                    const T gv = src[p];
                    if (gv == T(0)) continue;
                    const int64_t e = taps->entry(m, p);
                    for (int j = 0; j < taps->slots; ++j) {
                      const int32_t ti = taps->idx[e + j];
                      if (ti >= 0) plane[ti] += static_cast<T>(taps->w[e + j]) * gv;
                    }
                  }
                }
              }
            }
          }
        }
        if (bias && bias->requires_grad) {
          auto& gb = bias->ensure_grad();
          for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o) {
              const T* src = n.grad.data() + (static_cast<int64_t>(b) * O + o) * P;
              T acc = T(0);
              for (int p = 0; p < P; ++p) acc += src[p];
              gb[o] += acc;
            }
        }
      });
}

}  // namespace marsrec::ad
