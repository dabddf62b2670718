#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "marsrec/autodiff/losses.hpp"
#include "marsrec/data.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec {

// Two augmented views per sampled instance, interleaved: views 2k and 2k+1
// come from the same source image under independent transforms.
struct PairBatch {
  Tensor<float> images;  // [B, 1, H, W]
  std::vector<int> labels;
  std::vector<TransformSpec> transforms;
  std::vector<int> twin_index;  // fixed-point-free involution
};

PairBatch build_pair_batch(const PatchDataset& ds, const std::vector<int>& instance_pool, int B,
                           uint64_t seed, const TransformRanges& ranges);

inline PairBatch build_pair_batch(const PatchDataset& ds, int B, uint64_t seed) {
  std::vector<int> all(ds.num_instances());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return build_pair_batch(ds, all, B, seed, TransformRanges{});
}

struct MinedIndices {
  std::vector<int> ap, p;  // positive pairs, ordered (anchor, positive)
  std::vector<int> an, n;  // negative pairs, ordered (anchor, negative)
};

// Multi-similarity mining: positives are the augmented twins; a cross-label
// pair (a, n) is kept when sim(a, n) > sim(a, twin(a)) - eps.
template <typename T>
MinedIndices ms_mine(const Tensor<T>& emb, const std::vector<int>& labels,
                     const std::vector<int>& twin_index, double eps = 0.1) {
  if (emb.rank() != 2) throw InputError("ms_mine: embeddings must be [B, D]");
  const int B = emb.dim(0), D = emb.dim(1);
  if (static_cast<int>(labels.size()) != B || static_cast<int>(twin_index.size()) != B)
    throw InputError("ms_mine: labels/twin_index size mismatch");
  for (int i = 0; i < B; ++i)
    if (twin_index[i] < 0 || twin_index[i] >= B || twin_index[i] == i ||
        twin_index[twin_index[i]] != i)
      throw InputError("ms_mine: twin_index must be a fixed-point-free involution");

  std::vector<double> unit(static_cast<size_t>(B) * D);
  for (int i = 0; i < B; ++i) {
    double sq = 0;
    for (int d = 0; d < D; ++d) sq += double(emb.at(i, d)) * double(emb.at(i, d));
    const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
    for (int d = 0; d < D; ++d) unit[static_cast<size_t>(i) * D + d] = double(emb.at(i, d)) * inv;
  }
  auto sim = [&](int i, int j) {
    double s = 0;
    for (int d = 0; d < D; ++d)
      s += unit[static_cast<size_t>(i) * D + d] * unit[static_cast<size_t>(j) * D + d];
    return s;
  };

  MinedIndices out;
  bool multi_label = false;
  for (int i = 0; i < B; ++i)
    if (labels[i] != labels[0]) multi_label = true;
  if (!multi_label)
    std::fprintf(stderr, "warning: single-label batch, no negative pairs to mine\n");

  for (int a = 0; a < B; ++a) {
    out.ap.push_back(a);
    out.p.push_back(twin_index[a]);
    const double hardest_pos = sim(a, twin_index[a]);
    for (int j = 0; j < B; ++j) {
      if (labels[j] == labels[a]) continue;
      if (sim(a, j) > hardest_pos - eps) {
        out.an.push_back(a);
        out.n.push_back(j);
      }
    }
  }
  return out;
}

// Distinct unordered twin pairs (a < b), the rows the regularizer consumes.
inline std::vector<std::pair<int, int>> twin_pairs(const MinedIndices& mined) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t k = 0; k < mined.ap.size(); ++k)
    if (mined.ap[k] < mined.p[k]) pairs.emplace_back(mined.ap[k], mined.p[k]);
  return pairs;
}

struct LossParams {
  double tau = 0.07;    // ntxent / supcon temperature
  double delta = 0.1;   // proxy margin
  double alpha = 32.0;  // proxy scale
};

// Everything a metric loss could need; each implementation reads its subset.
template <typename T>
struct LossContext {
  ad::NodePtr<T> embeddings;  // [B, D], unnormalized
  const std::vector<int>* labels = nullptr;
  const MinedIndices* mined = nullptr;
  ad::NodePtr<T> proxies;  // [num_ids, D] when the loss is proxy-based
};

template <typename T>
using MetricLossFn = std::function<ad::NodePtr<T>(const LossContext<T>&, const LossParams&)>;

inline const std::vector<std::string>& available_losses() {
  static const std::vector<std::string> names = {"ntxent", "proxy_anchor", "supcon"};
  return names;
}

inline const std::vector<std::string>& optional_losses() {
  static const std::vector<std::string> names = {"circle",      "dr_ms",           "pnp",
                                                 "proxynca++",  "subcenter_arcface",
                                                 "proxy_synthesis"};
  return names;
}

template <typename T>
ad::NodePtr<T> ntxent_from_mined(const LossContext<T>& ctx, const LossParams& params) {
  if (!ctx.mined) throw InputError("ntxent: mined indices required");
  const int B = ctx.embeddings->value.dim(0);
  std::vector<int> twin(B, -1);
  for (size_t k = 0; k < ctx.mined->ap.size(); ++k) twin[ctx.mined->ap[k]] = ctx.mined->p[k];
  for (int i = 0; i < B; ++i)
    if (twin[i] < 0) throw InputError("ntxent: anchor without a positive");
  return ad::ntxent_loss(ctx.embeddings, twin, params.tau);
}

template <typename T>
MetricLossFn<T> resolve_loss(const std::string& name) {
  if (name == "ntxent") {
    return [](const LossContext<T>& ctx, const LossParams& p) { return ntxent_from_mined(ctx, p); };
  }
  if (name == "supcon") {
    return [](const LossContext<T>& ctx, const LossParams& p) {
      if (!ctx.labels) throw InputError("supcon: labels required");
      return ad::supcon_loss(ctx.embeddings, *ctx.labels, p.tau);
    };
  }
  if (name == "proxy_anchor") {
    return [](const LossContext<T>& ctx, const LossParams& p) {
      if (!ctx.labels) throw InputError("proxy_anchor: labels required");
      if (!ctx.proxies) throw InputError("proxy_anchor: proxy table required");
      const int rows = ctx.proxies->value.dim(0);
      for (int id : *ctx.labels)
        if (id < 0 || id >= rows) throw InputError("proxy_anchor: label without a proxy");
      return ad::proxy_anchor_loss(ctx.embeddings, ctx.proxies, *ctx.labels, p.delta, p.alpha);
    };
  }
  std::string listing;
  for (const auto& a : available_losses()) listing += (listing.empty() ? "" : ", ") + a;
  for (const auto& o : optional_losses())
    if (name == o)
      throw ConfigError("metric loss '" + name + "' is not available in this build; available: " +
                        listing);
  throw ConfigError("unknown metric loss '" + name + "'; available: " + listing);
}

}  // namespace marsrec
