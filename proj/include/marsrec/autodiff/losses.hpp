#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "marsrec/autodiff/graph.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec::ad {

namespace detail {

// Row-wise L2 normalization snapshot, in double regardless of T.
struct RowNorm {
  int m = 0, d = 0;
  std::vector<double> zhat;
  std::vector<double> norm;
  double at(int i, int j) const { return zhat[static_cast<size_t>(i) * d + j]; }
};

template <class T>
RowNorm row_normalize(const Tensor<T>& z, const char* who) {
  if (z.rank() != 2) throw std::invalid_argument(std::string(who) + ": need [M,D]");
  RowNorm rn;
  rn.m = z.dim(0);
  rn.d = z.dim(1);
  rn.zhat.resize(static_cast<size_t>(rn.m) * rn.d);
  rn.norm.resize(rn.m);
  for (int i = 0; i < rn.m; ++i) {
    double s = 0;
    const T* row = z.data() + static_cast<int64_t>(i) * rn.d;
    for (int j = 0; j < rn.d; ++j) s += static_cast<double>(row[j]) * row[j];
    rn.norm[i] = std::sqrt(s);
    if (rn.norm[i] < 1e-12) throw NumericError(std::string(who) + ": zero-norm row");
    for (int j = 0; j < rn.d; ++j)
      rn.zhat[static_cast<size_t>(i) * rn.d + j] = row[j] / rn.norm[i];
  }
  return rn;
}

// Pulls a gradient w.r.t. normalized rows back through the normalization.
template <class T>
void backprop_through_norm(const RowNorm& rn, const std::vector<double>& dzhat, Tensor<T>& gz,
                           double gscale) {
  for (int i = 0; i < rn.m; ++i) {
    double dot = 0;
    for (int j = 0; j < rn.d; ++j)
      dot += dzhat[static_cast<size_t>(i) * rn.d + j] * rn.at(i, j);
    for (int j = 0; j < rn.d; ++j) {
      const double g =
          (dzhat[static_cast<size_t>(i) * rn.d + j] - dot * rn.at(i, j)) / rn.norm[i];
      gz[static_cast<int64_t>(i) * rn.d + j] += static_cast<T>(gscale * g);
    }
  }
}

}  // namespace detail

// SimCLR-style normalized-temperature cross entropy. twin[i] is the index
// of row i's positive view; each anchor contrasts its positive against
// every other row of the batch.
template <class T>
NodePtr<T> ntxent_loss(const NodePtr<T>& z, const std::vector<int>& twin, double tau) {
  auto rn = std::make_shared<detail::RowNorm>(detail::row_normalize(z->value, "ntxent"));
  const int M = rn->m, D = rn->d;
  if (static_cast<int>(twin.size()) != M) throw std::invalid_argument("ntxent: twin size mismatch");
  if (M < 2) throw std::invalid_argument("ntxent: need at least one pair");
  if (tau <= 0) throw ConfigError("ntxent: temperature must be positive");
  for (int i = 0; i < M; ++i)
    if (twin[i] < 0 || twin[i] >= M || twin[i] == i || twin[twin[i]] != i)
      throw std::invalid_argument("ntxent: twin must be a fixed-point-free involution");

  // S in double; reused in backward via shared_ptr.
  auto S = std::make_shared<std::vector<double>>(static_cast<size_t>(M) * M, 0.0);
  for (int i = 0; i < M; ++i)
    for (int j = i + 1; j < M; ++j) {
      double dot = 0;
      for (int d = 0; d < D; ++d) dot += rn->at(i, d) * rn->at(j, d);
      (*S)[static_cast<size_t>(i) * M + j] = dot;
      (*S)[static_cast<size_t>(j) * M + i] = dot;
    }

  double loss = 0;
  for (int i = 0; i < M; ++i) {
    double mx = -1e300;
    for (int k = 0; k < M; ++k)
      if (k != i) mx = std::max(mx, (*S)[static_cast<size_t>(i) * M + k] / tau);
    double denom = 0;
    for (int k = 0; k < M; ++k)
      if (k != i) denom += std::exp((*S)[static_cast<size_t>(i) * M + k] / tau - mx);
    loss += -(*S)[static_cast<size_t>(i) * M + twin[i]] / tau + mx + std::log(denom);
  }
  loss /= M;

  return make_op<T>(Tensor<T>::scalar(static_cast<T>(loss)), {z},
                    [z, rn, S, twin, tau, M, D](Node<T>& n) {
                      // dL/dS_ij accumulated over both anchors i and j.
                      std::vector<double> G(static_cast<size_t>(M) * M, 0.0);
                      for (int i = 0; i < M; ++i) {
                        double mx = -1e300;
                        for (int k = 0; k < M; ++k)
                          if (k != i) mx = std::max(mx, (*S)[static_cast<size_t>(i) * M + k] / tau);
                        double denom = 0;
                        for (int k = 0; k < M; ++k)
                          if (k != i)
                            denom += std::exp((*S)[static_cast<size_t>(i) * M + k] / tau - mx);
                        for (int k = 0; k < M; ++k) {
                          if (k == i) continue;
                          const double p =
                              std::exp((*S)[static_cast<size_t>(i) * M + k] / tau - mx) / denom;
                          double g = p / tau;
                          if (k == twin[i]) g -= 1.0 / tau;
                          G[static_cast<size_t>(i) * M + k] += g / M;
                        }
                      }
                      // dzhat_i = sum_j (G_ij + G_ji) zhat_j
                      std::vector<double> dzhat(static_cast<size_t>(M) * D, 0.0);
                      for (int i = 0; i < M; ++i)
                        for (int j = 0; j < M; ++j) {
                          const double g = G[static_cast<size_t>(i) * M + j] +
                                           G[static_cast<size_t>(j) * M + i];
                          if (g == 0.0) continue;
                          for (int d = 0; d < D; ++d)
                            dzhat[static_cast<size_t>(i) * D + d] += g * rn->at(j, d);
                        }
                      detail::backprop_through_norm(*rn, dzhat, z->ensure_grad(),
                                                    static_cast<double>(n.grad[0]));
                    });
}

// Supervised contrastive loss: every same-label row is a positive.
// Anchors without positives are skipped; the loss averages over anchors
// that have at least one.
template <class T>
NodePtr<T> supcon_loss(const NodePtr<T>& z, const std::vector<int>& labels, double tau) {
  auto rn = std::make_shared<detail::RowNorm>(detail::row_normalize(z->value, "supcon"));
  const int M = rn->m, D = rn->d;
  if (static_cast<int>(labels.size()) != M)
    throw std::invalid_argument("supcon: labels size mismatch");
  if (tau <= 0) throw ConfigError("supcon: temperature must be positive");

  auto S = std::make_shared<std::vector<double>>(static_cast<size_t>(M) * M, 0.0);
  for (int i = 0; i < M; ++i)
    for (int j = i + 1; j < M; ++j) {
      double dot = 0;
      for (int d = 0; d < D; ++d) dot += rn->at(i, d) * rn->at(j, d);
      (*S)[static_cast<size_t>(i) * M + j] = dot;
      (*S)[static_cast<size_t>(j) * M + i] = dot;
    }

  int anchors = 0;
  double loss = 0;
  for (int i = 0; i < M; ++i) {
    int np = 0;
    for (int j = 0; j < M; ++j)
      if (j != i && labels[j] == labels[i]) np++;
    if (np == 0) continue;
    anchors++;
    double mx = -1e300;
    for (int k = 0; k < M; ++k)
      if (k != i) mx = std::max(mx, (*S)[static_cast<size_t>(i) * M + k] / tau);
    double denom = 0;
    for (int k = 0; k < M; ++k)
      if (k != i) denom += std::exp((*S)[static_cast<size_t>(i) * M + k] / tau - mx);
    const double logdenom = mx + std::log(denom);
    for (int j = 0; j < M; ++j)
      if (j != i && labels[j] == labels[i])
        loss += (-(*S)[static_cast<size_t>(i) * M + j] / tau + logdenom) / np;
  }
  if (anchors == 0) throw InputError("supcon: no anchor has a positive");
  loss /= anchors;

  return make_op<T>(
      Tensor<T>::scalar(static_cast<T>(loss)), {z},
      [z, rn, S, labels, tau, M, D](Node<T>& n) {
        int anchors = 0;
        std::vector<int> np(M, 0);
        for (int i = 0; i < M; ++i) {
          for (int j = 0; j < M; ++j)
            if (j != i && labels[j] == labels[i]) np[i]++;
          if (np[i] > 0) anchors++;
        }
        std::vector<double> G(static_cast<size_t>(M) * M, 0.0);
        for (int i = 0; i < M; ++i) {
          if (np[i] == 0) continue;
          double mx = -1e300;
          for (int k = 0; k < M; ++k)
            if (k != i) mx = std::max(mx, (*S)[static_cast<size_t>(i) * M + k] / tau);
          double denom = 0;
          for (int k = 0; k < M; ++k)
            if (k != i) denom += std::exp((*S)[static_cast<size_t>(i) * M + k] / tau - mx);
          for (int k = 0; k < M; ++k) {
            if (k == i) continue;
            const double p = std::exp((*S)[static_cast<size_t>(i) * M + k] / tau - mx) / denom;
            double g = p / tau;
            if (labels[k] == labels[i]) g -= 1.0 / (tau * np[i]);
            G[static_cast<size_t>(i) * M + k] += g / anchors;
          }
        }
        std::vector<double> dzhat(static_cast<size_t>(M) * D, 0.0);
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < M; ++j) {
            const double g =
                G[static_cast<size_t>(i) * M + j] + G[static_cast<size_t>(j) * M + i];
            if (g == 0.0) continue;
            for (int d = 0; d < D; ++d)
              dzhat[static_cast<size_t>(i) * D + d] += g * rn->at(j, d);
          }
        detail::backprop_through_norm(*rn, dzhat, z->ensure_grad(),
                                      static_cast<double>(n.grad[0]));
      });
}

// Proxy Anchor: soft-plus pull toward each class proxy with at least one
// batch sample, soft-plus push from every proxy's non-members. proxy_idx
// maps each batch row to its proxy row.
template <class T>
NodePtr<T> proxy_anchor_loss(const NodePtr<T>& z, const NodePtr<T>& proxies,
                             const std::vector<int>& proxy_idx, double delta, double alpha) {
  if (z->value.size() == 0) throw InputError("proxy_anchor: empty batch");
  auto rz = std::make_shared<detail::RowNorm>(detail::row_normalize(z->value, "proxy_anchor"));
  auto rp = std::make_shared<detail::RowNorm>(detail::row_normalize(proxies->value, "proxy_anchor proxies"));
  const int M = rz->m, D = rz->d, Pn = rp->m;
  if (rp->d != D) throw std::invalid_argument("proxy_anchor: dim mismatch");
  if (static_cast<int>(proxy_idx.size()) != M)
    throw std::invalid_argument("proxy_anchor: proxy_idx size mismatch");
  for (int i : proxy_idx)
    if (i < 0 || i >= Pn) throw InputError("proxy_anchor: label has no proxy");
  if (alpha <= 0) throw ConfigError("proxy_anchor: alpha must be positive");

  auto S = std::make_shared<std::vector<double>>(static_cast<size_t>(M) * Pn, 0.0);
  for (int i = 0; i < M; ++i)
    for (int p = 0; p < Pn; ++p) {
      double dot = 0;
      for (int d = 0; d < D; ++d) dot += rz->at(i, d) * rp->at(p, d);
      (*S)[static_cast<size_t>(i) * Pn + p] = dot;
    }

  std::vector<char> has_pos(Pn, 0);
  for (int i : proxy_idx) has_pos[i] = 1;
  int n_pos_proxies = 0;
  for (char c : has_pos) n_pos_proxies += c;

  double loss = 0;
  for (int p = 0; p < Pn; ++p) {
    if (has_pos[p]) {
      double s = 0;
      for (int i = 0; i < M; ++i)
        if (proxy_idx[i] == p)
          s += std::exp(-alpha * ((*S)[static_cast<size_t>(i) * Pn + p] - delta));
      loss += std::log1p(s) / n_pos_proxies;
    }
    double s = 0;
    for (int i = 0; i < M; ++i)
      if (proxy_idx[i] != p)
        s += std::exp(alpha * ((*S)[static_cast<size_t>(i) * Pn + p] + delta));
    loss += std::log1p(s) / Pn;
  }

  return make_op<T>(
      Tensor<T>::scalar(static_cast<T>(loss)), {z, proxies},
      [z, proxies, rz, rp, S, proxy_idx, delta, alpha, M, D, Pn](Node<T>& n) {
        std::vector<char> has_pos(Pn, 0);
        for (int i : proxy_idx) has_pos[i] = 1;
        int n_pos_proxies = 0;
        for (char c : has_pos) n_pos_proxies += c;

        std::vector<double> G(static_cast<size_t>(M) * Pn, 0.0);
        for (int p = 0; p < Pn; ++p) {
          if (has_pos[p]) {
            double s = 0;
            for (int i = 0; i < M; ++i)
              if (proxy_idx[i] == p)
                s += std::exp(-alpha * ((*S)[static_cast<size_t>(i) * Pn + p] - delta));
            const double front = 1.0 / ((1.0 + s) * n_pos_proxies);
            for (int i = 0; i < M; ++i)
              if (proxy_idx[i] == p)
                G[static_cast<size_t>(i) * Pn + p] +=
                    front * -alpha *
                    std::exp(-alpha * ((*S)[static_cast<size_t>(i) * Pn + p] - delta));
          }
          double s = 0;
          for (int i = 0; i < M; ++i)
            if (proxy_idx[i] != p)
              s += std::exp(alpha * ((*S)[static_cast<size_t>(i) * Pn + p] + delta));
          const double front = 1.0 / ((1.0 + s) * Pn);
          for (int i = 0; i < M; ++i)
            if (proxy_idx[i] != p)
              G[static_cast<size_t>(i) * Pn + p] +=
                  front * alpha *
                  std::exp(alpha * ((*S)[static_cast<size_t>(i) * Pn + p] + delta));
        }

        const double gy = static_cast<double>(n.grad[0]);
        if (z->requires_grad) {
          std::vector<double> dzhat(static_cast<size_t>(M) * D, 0.0);
          for (int i = 0; i < M; ++i)
            for (int p = 0; p < Pn; ++p) {
              const double g = G[static_cast<size_t>(i) * Pn + p];
              if (g == 0.0) continue;
              for (int d = 0; d < D; ++d)
                dzhat[static_cast<size_t>(i) * D + d] += g * rp->at(p, d);
            }
          detail::backprop_through_norm(*rz, dzhat, z->ensure_grad(), gy);
        }
        if (proxies->requires_grad) {
          std::vector<double> dphat(static_cast<size_t>(Pn) * D, 0.0);
          for (int i = 0; i < M; ++i)
            for (int p = 0; p < Pn; ++p) {
              const double g = G[static_cast<size_t>(i) * Pn + p];
              if (g == 0.0) continue;
              for (int d = 0; d < D; ++d)
                dphat[static_cast<size_t>(p) * D + d] += g * rz->at(i, d);
            }
          detail::backprop_through_norm(*rp, dphat, proxies->ensure_grad(), gy);
        }
      });
}

}  // namespace marsrec::ad
