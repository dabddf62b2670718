#pragma once

#include <cstdio>
#include <utility>
#include <vector>

#include "marsrec/autodiff/losses.hpp"
#include "marsrec/autodiff/warp.hpp"
#include "marsrec/backbone.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec {

using ad::NodePtr;

// Undoes each view's geometric transform on its attention maps so twin
// views compare in a shared pose. view_specs are at image resolution and
// are rescaled to the map grid; brightness plays no role here.
template <class T>
NodePtr<T> pose_normalize(const NodePtr<T>& maps, const std::vector<TransformSpec>& view_specs) {
  if (static_cast<int>(view_specs.size()) != maps->value.dim(0))
    throw InputError("pose_normalize: one transform per batch row required");
  const int h = maps->value.dim(2), w = maps->value.dim(3);
  std::vector<TransformSpec> inv;
  inv.reserve(view_specs.size());
  for (const auto& t : view_specs) inv.push_back(pose_normalizer(t, h, w));
  return ad::warp_views(maps, inv);
}

// GeM -> batch norm -> PReLU mini head; [B,C,L] -> [B,C].
template <class T>
struct MiniHead {
  nn::GeMPoolLayer<T> gem;
  nn::BatchNormLayer<T> bn;
  nn::PReLULayer<T> act;

  MiniHead() = default;
  MiniHead(int ch, double p_init) : gem(p_init), bn(ch) {}

  NodePtr<T> forward(const NodePtr<T>& x, bool training) {
    return act.forward(bn.forward(gem.forward(x), training));
  }

  void collect(const std::string& prefix, nn::ParamSet<T>& ps) {
    gem.collect(prefix + ".gem", ps);
    bn.collect(prefix + ".bn", ps);
    act.collect(prefix + ".act", ps);
  }
};

// Per-block regularizer head: a shared 1x1 channel reducer feeding three
// non-shared mini heads (channel, height profile, width profile).
template <class T>
struct MarsBlock {
  nn::Conv2dLayer<T> reducer;
  MiniHead<T> gc, gy, gx;

  MarsBlock() = default;
  MarsBlock(int ch, int r, double p_init, Rng& rng)
      : reducer(ch, ch / r, 1, 1, 0, 1, ad::ConvKind::standard, true, rng),
        gc(ch / r, p_init),
        gy(ch / r, p_init),
        gx(ch / r, p_init) {
    if (ch % r != 0) throw ConfigError("mars reducer ratio must divide the channel count");
  }

  struct Embeds {
    NodePtr<T> zc, zy, zx;  // each [B, C/r]
  };

  // maps: pose-normalized attention rows [B,C,H,W].
  Embeds embed(const NodePtr<T>& maps, bool training) {
    auto red = reducer.forward(maps);
    const auto& s = red->value.shape();
    auto zc = gc.forward(ad::reshape(red, {s[0], s[1], s[2] * s[3]}), training);
    auto zy = gy.forward(ad::mean_over_w(red), training);
    auto zx = gx.forward(ad::mean_over_h(red), training);
    return {zc, zy, zx};
  }

  struct Terms {
    NodePtr<T> ch;  // mean over pairs of 1 - cos(zc, zc')
    NodePtr<T> sp;  // same for zy plus same for zx
  };

  // rows must interleave twin pairs: [a0, b0, a1, b1, ...].
  Terms forward(const NodePtr<T>& pose_normalized_rows, bool training) {
    auto e = embed(pose_normalized_rows, training);
    return {ad::cosine_pair_mean(e.zc),
            ad::add(ad::cosine_pair_mean(e.zy), ad::cosine_pair_mean(e.zx))};
  }

  void collect(const std::string& prefix, nn::ParamSet<T>& ps) {
    reducer.collect(prefix + ".reducer", ps);
    gc.collect(prefix + ".gc", ps);
    gy.collect(prefix + ".gy", ps);
    gx.collect(prefix + ".gx", ps);
  }
};

// Weighted per-block regularizer value.
template <class T>
NodePtr<T> mars_loss(const typename MarsBlock<T>::Terms& terms, double gamma_ch, double gamma_sp) {
  return ad::add(ad::scale(terms.ch, gamma_ch), ad::scale(terms.sp, gamma_sp));
}

// Training objective: metric loss plus every block's regularizer term.
template <class T>
NodePtr<T> total_objective(const NodePtr<T>& metric_loss,
                           const std::vector<NodePtr<T>>& block_terms) {
  auto total = metric_loss;
  for (const auto& t : block_terms) total = ad::add(total, t);
  return total;
}

template <class T>
struct MarsOutput {
  NodePtr<T> total;             // scalar, zero constant when no twin pairs exist
  std::vector<double> block_ch; // per-block channel terms, for metrics
  std::vector<double> block_sp; // per-block spatial terms
};

// One regularizer head per backbone block.
template <class T>
struct MarsRegularizer {
  double gamma_ch = 0.15, gamma_sp = 0.15;
  std::vector<MarsBlock<T>> blocks;

  MarsRegularizer() = default;
  MarsRegularizer(const ModelConfig& cfg, Rng& rng) : gamma_ch(cfg.gamma_ch), gamma_sp(cfg.gamma_sp) {
    cfg.validate();
    for (int c : cfg.channels) blocks.emplace_back(c, cfg.reduction_r, cfg.gem_p_init, rng);
  }

  // maps: one attention tensor per block, each [B,C_i,H_i,W_i] over the same
  // batch of views; view_specs: the transform that produced each view;
  // pairs: (row, row) indices of augmented twins. Rows outside any pair are
  // never touched, so their maps need not be retained by the caller.
  MarsOutput<T> forward(const std::vector<NodePtr<T>>& maps,
                        const std::vector<TransformSpec>& view_specs,
                        const std::vector<std::pair<int, int>>& pairs, bool training) {
    if (maps.size() != blocks.size())
      throw InputError("mars regularizer: expected one attention map per block");

    MarsOutput<T> out;
    if (pairs.empty()) {
      std::fprintf(stderr, "warning: no augmented twin pairs in batch, regularizer is zero\n");
      out.total = ad::constant(Tensor<T>::scalar(T(0)));
      out.block_ch.assign(blocks.size(), 0.0);
      out.block_sp.assign(blocks.size(), 0.0);
      return out;
    }

    const int B = maps[0]->value.dim(0);
    std::vector<int> rows;
    std::vector<TransformSpec> row_specs;
    rows.reserve(pairs.size() * 2);
    for (const auto& [a, b] : pairs) {
      if (a < 0 || b < 0 || a >= B || b >= B || a == b)
        throw InputError("mars regularizer: twin pair indices out of range");
      rows.push_back(a);
      rows.push_back(b);
      row_specs.push_back(view_specs.at(a));
      row_specs.push_back(view_specs.at(b));
    }

    std::vector<NodePtr<T>> terms;
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto gathered = ad::gather_batch(maps[i], rows);
      auto normalized = pose_normalize(gathered, row_specs);
      auto t = blocks[i].forward(normalized, training);
      out.block_ch.push_back(static_cast<double>(t.ch->value[0]));
      out.block_sp.push_back(static_cast<double>(t.sp->value[0]));
      terms.push_back(mars_loss<T>(t, gamma_ch, gamma_sp));
    }
    out.total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
    return out;
  }

  void collect(nn::ParamSet<T>& ps) {
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect("mars.block" + std::to_string(i), ps);
  }
};

}  // namespace marsrec
