#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <type_traits>

#include "marsrec/autodiff/graph.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec::ad {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

namespace detail {
template <class T>
void check_same_shape(const NodePtr<T>& a, const NodePtr<T>& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a->value.shape()) + " vs " + shape_str(b->value.shape()));
}
}  // namespace detail

template <class T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <class T>
NodePtr<T> sum_nodes(const std::vector<NodePtr<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum_nodes: empty");
  NodePtr<T> acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

template <class T>
NodePtr<T> sum_all(const NodePtr<T>& a) {
  double acc = 0;
  for (int64_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [a](Node<T>& n) {
    auto& g = a->ensure_grad();
    const T gy = n.grad[0];
    for (int64_t i = 0; i < g.size(); ++i) g[i] += gy;
  });
}

template <class T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& g = b->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->value[i];
    }
  });
}

template <class T>
NodePtr<T> scale(const NodePtr<T>& a, double s) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(s) * a->value[i];
  return make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) g[i] += static_cast<T>(s) * n.grad[i];
  });
}

template <class T>
NodePtr<T> relu(const NodePtr<T>& a) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    auto& g = a->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i)
      if (a->value[i] > T(0)) g[i] += n.grad[i];
  });
}

// Single shared slope, PyTorch-default style.
template <class T>
NodePtr<T> prelu(const NodePtr<T>& a, const NodePtr<T>& alpha) {
  if (alpha->value.size() != 1) throw std::invalid_argument("prelu: alpha must be scalar");
  const T al = alpha->value[0];
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] > T(0) ? a->value[i] : al * a->value[i];
  return make_op<T>(std::move(out), {a, alpha}, [a, alpha](Node<T>& n) {
    const T al = alpha->value[0];
    if (a->requires_grad) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i)
        g[i] += n.grad[i] * (a->value[i] > T(0) ? T(1) : al);
    }
    if (alpha->requires_grad) {
      auto& g = alpha->ensure_grad();
      T acc = T(0);
      for (int64_t i = 0; i < a->value.size(); ++i)
        if (a->value[i] <= T(0)) acc += n.grad[i] * a->value[i];
      g[0] += acc;
    }
  });
}

template <class T>
NodePtr<T> sigmoid(const NodePtr<T>& a) {
  Tensor<T> out(a->value.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(a->value[i]);
    out[i] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
  }
  auto n = make_op<T>(std::move(out), {a}, nullptr);
  if (n->requires_grad) {
    n->backprop = [a](Node<T>& node) {
      auto& g = a->ensure_grad();
      for (int64_t i = 0; i < g.size(); ++i) {
        T y = node.value[i];
        g[i] += node.grad[i] * y * (T(1) - y);
      }
    };
  }
  return n;
}

// y = x @ W (+ bias), x: [B,K], W: [K,N], bias: [N] or null.
template <class T>
NodePtr<T> linear(const NodePtr<T>& x, const NodePtr<T>& w, const std::type_identity_t<NodePtr<T>>& bias) {
  if (x->value.rank() != 2 || w->value.rank() != 2 || x->value.dim(1) != w->value.dim(0))
    throw std::invalid_argument("linear: need x [B,K], W [K,N]");
  const int B = x->value.dim(0), K = x->value.dim(1), N = w->value.dim(1);
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != N))
    throw std::invalid_argument("linear: bias must be [N]");

  // Row-at-a-time products keep the arithmetic identical for every batch
  // position, so equal input rows give bitwise equal output rows.
  Tensor<T> out({B, N});
  ECMap<T> wm(w->value.data(), K, N);
  for (int b = 0; b < B; ++b) {
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xb(x->value.data() + static_cast<int64_t>(b) * K, K);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yb(out.data() + static_cast<int64_t>(b) * N, N);
    yb.noalias() = wm.transpose() * xb;
  }
  if (bias)
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < N; ++j) out.at(b, j) += bias->value[j];

  std::vector<NodePtr<T>> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents), [x, w, bias, B, K, N](Node<T>& n) {
    ECMap<T> wm(w->value.data(), K, N);
    for (int b = 0; b < B; ++b) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gyb(n.grad.data() + static_cast<int64_t>(b) * N, N);
      if (x->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gxb(x->ensure_grad().data() + static_cast<int64_t>(b) * K, K);
        gxb.noalias() += wm * gyb;
      }
      if (w->requires_grad) {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xb(x->value.data() + static_cast<int64_t>(b) * K, K);
        EMap<T> gw(w->ensure_grad().data(), K, N);
        gw.noalias() += xb * gyb.transpose();
      }
    }
    if (bias && bias->requires_grad) {
      auto& gb = bias->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < N; ++j) gb[j] += n.grad[static_cast<int64_t>(b) * N + j];
    }
  });
}

// 1x1 convolution over a sequence: x [B,C,L], W [O,C], bias [O] or null.
template <class T>
NodePtr<T> pointwise_linear(const NodePtr<T>& x, const NodePtr<T>& w, const std::type_identity_t<NodePtr<T>>& bias) {
  if (x->value.rank() != 3 || w->value.rank() != 2 || w->value.dim(1) != x->value.dim(1))
    throw std::invalid_argument("pointwise_linear: need x [B,C,L], W [O,C]");
  const int B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2), O = w->value.dim(0);
  if (bias && bias->value.size() != O) throw std::invalid_argument("pointwise_linear: bias must be [O]");

  Tensor<T> out({B, O, L});
  ECMap<T> wm(w->value.data(), O, C);
  for (int b = 0; b < B; ++b) {
    ECMap<T> xb(x->value.data() + static_cast<int64_t>(b) * C * L, C, L);
    EMap<T> yb(out.data() + static_cast<int64_t>(b) * O * L, O, L);
    yb.noalias() = wm * xb;
  }
  if (bias)
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o) {
        const T bv = bias->value[o];
        T* row = out.data() + (static_cast<int64_t>(b) * O + o) * L;
        for (int l = 0; l < L; ++l) row[l] += bv;
      }

  std::vector<NodePtr<T>> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents), [x, w, bias, B, C, L, O](Node<T>& n) {
    ECMap<T> wm(w->value.data(), O, C);
    for (int b = 0; b < B; ++b) {
      ECMap<T> gy(n.grad.data() + static_cast<int64_t>(b) * O * L, O, L);
      if (x->requires_grad) {
        EMap<T> gx(x->ensure_grad().data() + static_cast<int64_t>(b) * C * L, C, L);
        gx.noalias() += wm.transpose() * gy;
      }
      if (w->requires_grad) {
        EMap<T> gw(w->ensure_grad().data(), O, C);
        ECMap<T> xb(x->value.data() + static_cast<int64_t>(b) * C * L, C, L);
        gw.noalias() += gy * xb.transpose();
      }
    }
    if (bias && bias->requires_grad) {
      auto& gb = bias->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) {
          const T* row = n.grad.data() + (static_cast<int64_t>(b) * O + o) * L;
          T acc = T(0);
          for (int l = 0; l < L; ++l) acc += row[l];
          gb[o] += acc;
        }
    }
  });
}

namespace detail {
// Channel-major view: any of [B,C], [B,C,L], [B,C,H,W] as (B, C, L).
template <class T>
void bcl_dims(const Tensor<T>& t, int& B, int& C, int64_t& L, const char* op) {
  if (t.rank() < 2 || t.rank() > 4)
    throw std::invalid_argument(std::string(op) + ": rank must be 2..4");
  B = t.dim(0);
  C = t.dim(1);
  L = 1;
  for (int i = 2; i < t.rank(); ++i) L *= t.dim(i);
}
}  // namespace detail

// Batch normalization over all axes but the channel axis (dim 1).
// Running stats live outside the graph; training updates them in place
// (biased batch variance normalizes, unbiased updates the running value).
template <class T>
NodePtr<T> batchnorm(const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     double momentum = 0.1, double eps = 1e-5) {
  int B, C;
  int64_t L;
  detail::bcl_dims(x->value, B, C, L, "batchnorm");
  if (gamma->value.size() != C || beta->value.size() != C || running_mean.size() != C ||
      running_var.size() != C)
    throw std::invalid_argument("batchnorm: per-channel parameter size mismatch");

  const int64_t N = static_cast<int64_t>(B) * L;
  std::vector<double> mean(C), var(C), invstd(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (int b = 0; b < B; ++b) {
        const T* p = x->value.data() + (static_cast<int64_t>(b) * C + c) * L;
        for (int64_t l = 0; l < L; ++l) {
          s += p[l];
          ss += static_cast<double>(p[l]) * p[l];
        }
      }
      mean[c] = s / N;
      var[c] = std::max(0.0, ss / N - mean[c] * mean[c]);
      invstd[c] = 1.0 / std::sqrt(var[c] + eps);
      const double unbiased = N > 1 ? var[c] * N / (N - 1) : var[c];
      running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mean[c]);
      running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
      invstd[c] = 1.0 / std::sqrt(var[c] + eps);
    }
  }

  Tensor<T> xhat(x->value.shape());
  Tensor<T> out(x->value.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* p = x->value.data() + (static_cast<int64_t>(b) * C + c) * L;
      T* ph = xhat.data() + (static_cast<int64_t>(b) * C + c) * L;
      T* po = out.data() + (static_cast<int64_t>(b) * C + c) * L;
      const T g = gamma->value[c], be = beta->value[c];
      for (int64_t l = 0; l < L; ++l) {
        ph[l] = static_cast<T>((p[l] - mean[c]) * invstd[c]);
        po[l] = g * ph[l] + be;
      }
    }

  auto xhat_shared = std::make_shared<Tensor<T>>(std::move(xhat));
  auto invstd_shared = std::make_shared<std::vector<double>>(std::move(invstd));
  return make_op<T>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat_shared, invstd_shared, training, B, C, L, N](Node<T>& n) {
        const Tensor<T>& xh = *xhat_shared;
        const std::vector<double>& istd = *invstd_shared;
        for (int c = 0; c < C; ++c) {
          double sum_gy = 0, sum_gy_xhat = 0;
          for (int b = 0; b < B; ++b) {
            const T* gy = n.grad.data() + (static_cast<int64_t>(b) * C + c) * L;
            const T* ph = xh.data() + (static_cast<int64_t>(b) * C + c) * L;
            for (int64_t l = 0; l < L; ++l) {
              sum_gy += gy[l];
              sum_gy_xhat += static_cast<double>(gy[l]) * ph[l];
            }
          }
          if (gamma->requires_grad) gamma->ensure_grad()[c] += static_cast<T>(sum_gy_xhat);
          if (beta->requires_grad) beta->ensure_grad()[c] += static_cast<T>(sum_gy);
          if (x->requires_grad) {
            auto& gx = x->ensure_grad();
            const double g = gamma->value[c];
            for (int b = 0; b < B; ++b) {
              const T* gy = n.grad.data() + (static_cast<int64_t>(b) * C + c) * L;
              const T* ph = xh.data() + (static_cast<int64_t>(b) * C + c) * L;
              T* gxp = gx.data() + (static_cast<int64_t>(b) * C + c) * L;
              for (int64_t l = 0; l < L; ++l) {
                double d;
                if (training) {
                  d = g * istd[c] *
                      (gy[l] - sum_gy / N - ph[l] * sum_gy_xhat / N);
                } else {
                  d = g * istd[c] * gy[l];
                }
                gxp[l] += static_cast<T>(d);
              }
            }
          }
        }
      });
}

// GeM over the trailing axis of [B,C,L]: ((1/L) sum clamp(x,eps)^p)^(1/p).
// p is a learnable scalar node; gradient flows to x and p.
template <class T>
NodePtr<T> gem_pool(const NodePtr<T>& x, const NodePtr<T>& p, double eps = 1e-6) {
  if (x->value.rank() != 3) throw std::invalid_argument("gem_pool: need [B,C,L]");
  if (p->value.size() != 1) throw std::invalid_argument("gem_pool: p must be scalar");
  const double pv = p->value[0];
  if (pv < 1.0) throw ConfigError("gem_pool: p must be >= 1");
  const int B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);

  Tensor<T> out({B, C});
  Tensor<double> mpow({B, C});      // mean of clamped^p
  Tensor<double> mlog({B, C});      // mean of clamped^p * log(clamped)
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* row = x->value.data() + (static_cast<int64_t>(b) * C + c) * L;
      double s = 0, sl = 0;
      for (int l = 0; l < L; ++l) {
        double v = std::max(static_cast<double>(row[l]), eps);
        double vp = std::pow(v, pv);
        s += vp;
        sl += vp * std::log(v);
      }
      s /= L;
      sl /= L;
      mpow.at(b, c) = s;
      mlog.at(b, c) = sl;
      out.at(b, c) = static_cast<T>(std::pow(s, 1.0 / pv));
    }

  auto mpow_s = std::make_shared<Tensor<double>>(std::move(mpow));
  auto mlog_s = std::make_shared<Tensor<double>>(std::move(mlog));
  return make_op<T>(std::move(out), {x, p}, [x, p, mpow_s, mlog_s, eps, B, C, L](Node<T>& n) {
    const double pv = p->value[0];
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const double m = mpow_s->at(b, c);
        const double gy = n.grad[static_cast<int64_t>(b) * C + c];
        if (gy == 0.0) continue;
        const double y = std::pow(m, 1.0 / pv);
        if (x->requires_grad) {
          auto& gx = x->ensure_grad();
          const T* row = x->value.data() + (static_cast<int64_t>(b) * C + c) * L;
          T* grow = gx.data() + (static_cast<int64_t>(b) * C + c) * L;
          const double front = std::pow(m, 1.0 / pv - 1.0) / L;
          for (int l = 0; l < L; ++l) {
            double v = static_cast<double>(row[l]);
            if (v <= eps) continue;  // clamp region blocks the gradient
            grow[l] += static_cast<T>(gy * front * std::pow(v, pv - 1.0));
          }
        }
        if (p->requires_grad) {
          // d/dp m^(1/p) = y * (-log(m)/p^2 + mlog/(p*m))
          const double dp = y * (-std::log(m) / (pv * pv) + mlog_s->at(b, c) / (pv * m));
          p->ensure_grad()[0] += static_cast<T>(gy * dp);
        }
      }
  });
}

template <class T>
NodePtr<T> global_mean_hw(const NodePtr<T>& x) {
  if (x->value.rank() != 4) throw std::invalid_argument("global_mean_hw: need [B,C,H,W]");
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t L = static_cast<int64_t>(x->value.dim(2)) * x->value.dim(3);
  Tensor<T> out({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* row = x->value.data() + (static_cast<int64_t>(b) * C + c) * L;
      double s = 0;
      for (int64_t l = 0; l < L; ++l) s += row[l];
      out.at(b, c) = static_cast<T>(s / L);
    }
  return make_op<T>(std::move(out), {x}, [x, B, C, L](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T g = n.grad[static_cast<int64_t>(b) * C + c] / static_cast<T>(L);
        T* row = gx.data() + (static_cast<int64_t>(b) * C + c) * L;
        for (int64_t l = 0; l < L; ++l) row[l] += g;
      }
  });
}

// [B,C,H,W] -> [B,C,H], averaging across width.
template <class T>
NodePtr<T> mean_over_w(const NodePtr<T>& x) {
  if (x->value.rank() != 4) throw std::invalid_argument("mean_over_w: need [B,C,H,W]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor<T> out({B, C, H});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const T* row = x->value.data() + ((static_cast<int64_t>(b) * C + c) * H + h) * W;
        double s = 0;
        for (int w = 0; w < W; ++w) s += row[w];
        out.at(b, c, h) = static_cast<T>(s / W);
      }
  return make_op<T>(std::move(out), {x}, [x, B, C, H, W](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
          const T g = n.grad[(static_cast<int64_t>(b) * C + c) * H + h] / static_cast<T>(W);
          T* row = gx.data() + ((static_cast<int64_t>(b) * C + c) * H + h) * W;
          for (int w = 0; w < W; ++w) row[w] += g;
        }
  });
}

// [B,C,H,W] -> [B,C,W], averaging across height.
template <class T>
NodePtr<T> mean_over_h(const NodePtr<T>& x) {
  if (x->value.rank() != 4) throw std::invalid_argument("mean_over_h: need [B,C,H,W]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor<T> out({B, C, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int w = 0; w < W; ++w) {
        double s = 0;
        for (int h = 0; h < H; ++h)
          s += x->value[((static_cast<int64_t>(b) * C + c) * H + h) * W + w];
        out.at(b, c, w) = static_cast<T>(s / H);
      }
  return make_op<T>(std::move(out), {x}, [x, B, C, H, W](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int w = 0; w < W; ++w) {
          const T g = n.grad[(static_cast<int64_t>(b) * C + c) * W + w] / static_cast<T>(H);
          for (int h = 0; h < H; ++h)
            gx[((static_cast<int64_t>(b) * C + c) * H + h) * W + w] += g;
        }
  });
}

template <class T>
NodePtr<T> concat_last(const NodePtr<T>& a, const NodePtr<T>& b) {
  if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.dim(0) != b->value.dim(0) ||
      a->value.dim(1) != b->value.dim(1))
    throw std::invalid_argument("concat_last: need [B,C,La] and [B,C,Lb]");
  const int B = a->value.dim(0), C = a->value.dim(1), La = a->value.dim(2), Lb = b->value.dim(2);
  Tensor<T> out({B, C, La + Lb});
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      T* dst = out.data() + (static_cast<int64_t>(bi) * C + c) * (La + Lb);
      const T* pa = a->value.data() + (static_cast<int64_t>(bi) * C + c) * La;
      const T* pb = b->value.data() + (static_cast<int64_t>(bi) * C + c) * Lb;
      std::copy(pa, pa + La, dst);
      std::copy(pb, pb + Lb, dst + La);
    }
  return make_op<T>(std::move(out), {a, b}, [a, b, B, C, La, Lb](Node<T>& n) {
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < C; ++c) {
        const T* g = n.grad.data() + (static_cast<int64_t>(bi) * C + c) * (La + Lb);
        if (a->requires_grad) {
          T* ga = a->ensure_grad().data() + (static_cast<int64_t>(bi) * C + c) * La;
          for (int l = 0; l < La; ++l) ga[l] += g[l];
        }
        if (b->requires_grad) {
          T* gb = b->ensure_grad().data() + (static_cast<int64_t>(bi) * C + c) * Lb;
          for (int l = 0; l < Lb; ++l) gb[l] += g[La + l];
        }
      }
  });
}

template <class T>
NodePtr<T> slice_last(const NodePtr<T>& x, int start, int len) {
  if (x->value.rank() != 3) throw std::invalid_argument("slice_last: need [B,C,L]");
  const int B = x->value.dim(0), C = x->value.dim(1), L = x->value.dim(2);
  if (start < 0 || len < 1 || start + len > L) throw std::invalid_argument("slice_last: bad range");
  Tensor<T> out({B, C, len});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = x->value.data() + (static_cast<int64_t>(b) * C + c) * L + start;
      T* dst = out.data() + (static_cast<int64_t>(b) * C + c) * len;
      std::copy(src, src + len, dst);
    }
  return make_op<T>(std::move(out), {x}, [x, B, C, L, start, len](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        T* dst = gx.data() + (static_cast<int64_t>(b) * C + c) * L + start;
        const T* g = n.grad.data() + (static_cast<int64_t>(b) * C + c) * len;
        for (int l = 0; l < len; ++l) dst[l] += g[l];
      }
  });
}

// x [B,C,H,W] scaled per channel by g [B,C].
template <class T>
NodePtr<T> mul_gate_c(const NodePtr<T>& x, const NodePtr<T>& g) {
  if (x->value.rank() != 4 || g->value.rank() != 2 || g->value.dim(0) != x->value.dim(0) ||
      g->value.dim(1) != x->value.dim(1))
    throw std::invalid_argument("mul_gate_c: need x [B,C,H,W], g [B,C]");
  const int B = x->value.dim(0), C = x->value.dim(1);
  const int64_t L = static_cast<int64_t>(x->value.dim(2)) * x->value.dim(3);
  Tensor<T> out(x->value.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T gv = g->value[static_cast<int64_t>(b) * C + c];
      const T* src = x->value.data() + (static_cast<int64_t>(b) * C + c) * L;
      T* dst = out.data() + (static_cast<int64_t>(b) * C + c) * L;
      for (int64_t l = 0; l < L; ++l) dst[l] = src[l] * gv;
    }
  return make_op<T>(std::move(out), {x, g}, [x, g, B, C, L](Node<T>& n) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const int64_t base = (static_cast<int64_t>(b) * C + c) * L;
        const T gv = g->value[static_cast<int64_t>(b) * C + c];
        if (x->requires_grad) {
          auto& gx = x->ensure_grad();
          for (int64_t l = 0; l < L; ++l) gx[base + l] += n.grad[base + l] * gv;
        }
        if (g->requires_grad) {
          T acc = T(0);
          for (int64_t l = 0; l < L; ++l) acc += n.grad[base + l] * x->value[base + l];
          g->ensure_grad()[static_cast<int64_t>(b) * C + c] += acc;
        }
      }
  });
}

// x [B,C,H,W] scaled along rows by g [B,C,H] (broadcast across W).
template <class T>
NodePtr<T> mul_gate_h(const NodePtr<T>& x, const NodePtr<T>& g) {
  if (x->value.rank() != 4 || g->value.rank() != 3 || g->value.dim(0) != x->value.dim(0) ||
      g->value.dim(1) != x->value.dim(1) || g->value.dim(2) != x->value.dim(2))
    throw std::invalid_argument("mul_gate_h: need x [B,C,H,W], g [B,C,H]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor<T> out(x->value.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const T gv = g->value[(static_cast<int64_t>(b) * C + c) * H + h];
        const int64_t base = ((static_cast<int64_t>(b) * C + c) * H + h) * W;
        for (int w = 0; w < W; ++w) out[base + w] = x->value[base + w] * gv;
      }
  return make_op<T>(std::move(out), {x, g}, [x, g, B, C, H, W](Node<T>& n) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
          const int64_t gi = (static_cast<int64_t>(b) * C + c) * H + h;
          const int64_t base = gi * W;
          const T gv = g->value[gi];
          if (x->requires_grad) {
            auto& gx = x->ensure_grad();
            for (int w = 0; w < W; ++w) gx[base + w] += n.grad[base + w] * gv;
          }
          if (g->requires_grad) {
            T acc = T(0);
            for (int w = 0; w < W; ++w) acc += n.grad[base + w] * x->value[base + w];
            g->ensure_grad()[gi] += acc;
          }
        }
  });
}

// x [B,C,H,W] scaled along columns by g [B,C,W] (broadcast across H).
template <class T>
NodePtr<T> mul_gate_w(const NodePtr<T>& x, const NodePtr<T>& g) {
  if (x->value.rank() != 4 || g->value.rank() != 3 || g->value.dim(0) != x->value.dim(0) ||
      g->value.dim(1) != x->value.dim(1) || g->value.dim(2) != x->value.dim(3))
    throw std::invalid_argument("mul_gate_w: need x [B,C,H,W], g [B,C,W]");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  Tensor<T> out(x->value.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const int64_t base = ((static_cast<int64_t>(b) * C + c) * H + h) * W;
        const T* grow = g->value.data() + (static_cast<int64_t>(b) * C + c) * W;
        for (int w = 0; w < W; ++w) out[base + w] = x->value[base + w] * grow[w];
      }
  return make_op<T>(std::move(out), {x, g}, [x, g, B, C, H, W](Node<T>& n) {
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const int64_t gbase = (static_cast<int64_t>(b) * C + c) * W;
        for (int h = 0; h < H; ++h) {
          const int64_t base = ((static_cast<int64_t>(b) * C + c) * H + h) * W;
          if (x->requires_grad) {
            auto& gx = x->ensure_grad();
            for (int w = 0; w < W; ++w) gx[base + w] += n.grad[base + w] * g->value[gbase + w];
          }
          if (g->requires_grad) {
            auto& gg = g->ensure_grad();
            for (int w = 0; w < W; ++w) gg[gbase + w] += n.grad[base + w] * x->value[base + w];
          }
        }
      }
  });
}

template <class T>
NodePtr<T> reshape(const NodePtr<T>& x, const std::vector<int>& shape) {
  Tensor<T> out = x->value.reshaped(shape);
  return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[i];
  });
}

// Select batch rows of a [B,...] tensor; duplicate indices accumulate on
// the way back.
template <class T>
NodePtr<T> gather_batch(const NodePtr<T>& x, const std::vector<int>& idx) {
  if (x->value.rank() < 1) throw std::invalid_argument("gather_batch: rank >= 1 required");
  const int B = x->value.dim(0);
  const int64_t stride = x->value.size() / B;
  for (int i : idx)
    if (i < 0 || i >= B) throw std::invalid_argument("gather_batch: index out of range");
  auto shape = x->value.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor<T> out(shape);
  for (size_t k = 0; k < idx.size(); ++k)
    std::copy(x->value.data() + static_cast<int64_t>(idx[k]) * stride,
              x->value.data() + static_cast<int64_t>(idx[k] + 1) * stride,
              out.data() + static_cast<int64_t>(k) * stride);
  return make_op<T>(std::move(out), {x}, [x, idx, stride](Node<T>& n) {
    auto& gx = x->ensure_grad();
    for (size_t k = 0; k < idx.size(); ++k) {
      const T* g = n.grad.data() + static_cast<int64_t>(k) * stride;
      T* dst = gx.data() + static_cast<int64_t>(idx[k]) * stride;
      for (int64_t i = 0; i < stride; ++i) dst[i] += g[i];
    }
  });
}

// Mean over consecutive row pairs (2k, 2k+1) of 1 - cosine similarity.
template <class T>
NodePtr<T> cosine_pair_mean(const NodePtr<T>& z, double norm_eps = 1e-8) {
  if (z->value.rank() != 2 || z->value.dim(0) % 2 != 0)
    throw std::invalid_argument("cosine_pair_mean: need [2P,D]");
  const int M = z->value.dim(0), D = z->value.dim(1), P = M / 2;
  if (P == 0) throw std::invalid_argument("cosine_pair_mean: empty");

  std::vector<double> norms(M);
  for (int i = 0; i < M; ++i) {
    double s = 0;
    const T* row = z->value.data() + static_cast<int64_t>(i) * D;
    for (int d = 0; d < D; ++d) s += static_cast<double>(row[d]) * row[d];
    norms[i] = std::sqrt(s);
    if (norms[i] < norm_eps) throw NumericError("cosine_pair_mean: near-zero embedding norm");
  }
  std::vector<double> coss(P);
  double acc = 0;
  for (int k = 0; k < P; ++k) {
    const T* u = z->value.data() + static_cast<int64_t>(2 * k) * D;
    const T* v = z->value.data() + static_cast<int64_t>(2 * k + 1) * D;
    double dot = 0;
    for (int d = 0; d < D; ++d) dot += static_cast<double>(u[d]) * v[d];
    coss[k] = dot / (norms[2 * k] * norms[2 * k + 1]);
    acc += 1.0 - coss[k];
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / P));

  auto norms_s = std::make_shared<std::vector<double>>(std::move(norms));
  auto coss_s = std::make_shared<std::vector<double>>(std::move(coss));
  return make_op<T>(std::move(out), {z}, [z, norms_s, coss_s, D, P](Node<T>& n) {
    const double gy = n.grad[0];
    auto& gz = z->ensure_grad();
    for (int k = 0; k < P; ++k) {
      const T* u = z->value.data() + static_cast<int64_t>(2 * k) * D;
      const T* v = z->value.data() + static_cast<int64_t>(2 * k + 1) * D;
      T* gu = gz.data() + static_cast<int64_t>(2 * k) * D;
      T* gv = gz.data() + static_cast<int64_t>(2 * k + 1) * D;
      const double nu = (*norms_s)[2 * k], nv = (*norms_s)[2 * k + 1], cs = (*coss_s)[k];
      // d(1-cos)/du = -(v/(|u||v|) - cos * u/|u|^2)
      const double f = -gy / P;
      for (int d = 0; d < D; ++d) {
        gu[d] += static_cast<T>(f * (v[d] / (nu * nv) - cs * u[d] / (nu * nu)));
        gv[d] += static_cast<T>(f * (u[d] / (nu * nv) - cs * v[d] / (nv * nv)));
      }
    }
  });
}

}  // namespace marsrec::ad
