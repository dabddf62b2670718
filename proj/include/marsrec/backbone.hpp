#pragma once

#include <string>
#include <vector>

#include "marsrec/nn.hpp"

namespace marsrec {

struct ModelConfig {
  std::string conv_kind = "standard";     // standard | ric
  std::string attention_kind = "se";      // se | ca
  bool mars_enabled = false;
  int num_blocks = 4;
  std::vector<int> channels = {32, 64, 128, 256};
  int embedding_dim = 128;
  double gem_p_init = 3.0;
  int reduction_r = 4;      // shared 1x1 reducer ratio for the regularizer heads
  double gamma_ch = 0.15;
  double gamma_sp = 0.15;
  int input_h = 64;
  int input_w = 64;
  int cardinality = 4;
  int se_reduction = 4;

  ad::ConvKind conv() const {
    if (conv_kind == "standard") return ad::ConvKind::standard;
    if (conv_kind == "ric") return ad::ConvKind::ric;
    throw ConfigError("conv_kind must be 'standard' or 'ric', got '" + conv_kind + "'");
  }

  void validate() const {
    conv();
    if (attention_kind != "se" && attention_kind != "ca")
      throw ConfigError("attention_kind must be 'se' or 'ca', got '" + attention_kind + "'");
    if (mars_enabled && attention_kind != "ca")
      throw ConfigError("mars_enabled requires attention_kind 'ca'");
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (static_cast<int>(channels.size()) != num_blocks)
      throw ConfigError("channels list must have num_blocks entries");
    if (cardinality < 1) throw ConfigError("cardinality must be >= 1");
    for (int c : channels) {
      if (c < 1) throw ConfigError("channel counts must be positive");
      if (c % (2 * cardinality) != 0)
        throw ConfigError("each channel count must be divisible by 2*cardinality");
      if (c % reduction_r != 0)
        throw ConfigError("reduction_r must divide every block channel count");
    }
    if (embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
    if (gem_p_init < 1.0) throw ConfigError("gem_p_init must be >= 1");
    if (gamma_ch < 0 || gamma_sp < 0) throw ConfigError("loss weights must be >= 0");
    if (reduction_r < 1) throw ConfigError("reduction_r must be >= 1");
    if (se_reduction < 1) throw ConfigError("se_reduction must be >= 1");
    const int down = 1 << (num_blocks + 1);  // stem stride 2 plus one per block
    if (input_h < down || input_w < down || input_h % down != 0 || input_w % down != 0)
      throw ConfigError("input resolution must be a multiple of 2^(num_blocks+1)");
  }

  // Spatial size of block i's feature map (square inputs only need one side).
  int map_h(int i) const { return input_h >> (i + 2); }
  int map_w(int i) const { return input_w >> (i + 2); }
};

namespace nn {

// Downsampling residual unit: 1x1 reduce, grouped 3x3 stride 2, 1x1 expand,
// attention gate on the residual branch, projected shortcut.
template <class T>
struct BottleneckBlock {
  Conv2dLayer<T> conv1, conv2, conv3, conv_short;
  BatchNormLayer<T> bn1, bn2, bn3, bn_short;
  bool use_ca = false;
  SEBlock<T> se;
  CABlock<T> ca;

  BottleneckBlock() = default;
  BottleneckBlock(int in, int out, const ModelConfig& cfg, Rng& rng)
      : conv1(in, out / 2, 1, 1, 0, 1, cfg.conv(), false, rng),
        conv2(out / 2, out / 2, 3, 2, 1, cfg.cardinality, cfg.conv(), false, rng),
        conv3(out / 2, out, 1, 1, 0, 1, cfg.conv(), false, rng),
        conv_short(in, out, 1, 2, 0, 1, cfg.conv(), false, rng),
        bn1(out / 2),
        bn2(out / 2),
        bn3(out),
        bn_short(out),
        use_ca(cfg.attention_kind == "ca") {
    if (use_ca)
      ca = CABlock<T>(out, rng);
    else
      se = SEBlock<T>(out, cfg.se_reduction, rng);
  }

  struct Out {
    NodePtr<T> feature;    // block output after shortcut add + relu
    NodePtr<T> attention;  // gated residual branch, the map the regularizer sees
  };

  Out forward(const NodePtr<T>& x, bool training) {
    auto y = ad::relu(bn1.forward(conv1.forward(x), training));
    y = ad::relu(bn2.forward(conv2.forward(y), training));
    y = bn3.forward(conv3.forward(y), training);
    auto gated = use_ca ? ca.forward(y, training) : se.forward(y, training);
    auto sc = bn_short.forward(conv_short.forward(x), training);
    return {ad::relu(ad::add(gated, sc)), gated};
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) {
    conv1.collect(prefix + ".conv1", ps);
    bn1.collect(prefix + ".bn1", ps);
    conv2.collect(prefix + ".conv2", ps);
    bn2.collect(prefix + ".bn2", ps);
    conv3.collect(prefix + ".conv3", ps);
    bn3.collect(prefix + ".bn3", ps);
    conv_short.collect(prefix + ".conv_short", ps);
    bn_short.collect(prefix + ".bn_short", ps);
    if (use_ca)
      ca.collect(prefix + ".ca", ps);
    else
      se.collect(prefix + ".se", ps);
  }
};

template <class T>
struct Encoder {
  ModelConfig cfg;
  Conv2dLayer<T> stem;
  BatchNormLayer<T> stem_bn;
  std::vector<BottleneckBlock<T>> blocks;

  Encoder() = default;
  Encoder(const ModelConfig& cfg_, Rng& rng) : cfg(cfg_) {
    cfg.validate();
    const int stem_out = cfg.channels[0] / 2;
    stem = Conv2dLayer<T>(1, stem_out, 3, 2, 1, 1, cfg.conv(), false, rng);
    stem_bn = BatchNormLayer<T>(stem_out);
    int in = stem_out;
    for (int i = 0; i < cfg.num_blocks; ++i) {
      blocks.emplace_back(in, cfg.channels[i], cfg, rng);
      in = cfg.channels[i];
    }
  }

  struct Out {
    NodePtr<T> h;                        // final feature [B, C_N, H_N, W_N]
    std::vector<NodePtr<T>> attention;   // one map per block
  };

  // images: [B, 1, H, W]
  Out forward(const NodePtr<T>& images, bool training) {
    const auto& s = images->value.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != cfg.input_h || s[3] != cfg.input_w)
      throw InputError("encoder expects [B,1," + std::to_string(cfg.input_h) + "," +
                       std::to_string(cfg.input_w) + "], got " + shape_str(images->value.shape()));
    auto x = ad::relu(stem_bn.forward(stem.forward(images), training));
    Out out;
    out.attention.reserve(blocks.size());
    for (auto& b : blocks) {
      auto r = b.forward(x, training);
      x = r.feature;
      out.attention.push_back(r.attention);
    }
    out.h = x;
    return out;
  }

  void collect(ParamSet<T>& ps) {
    stem.collect("encoder.stem", ps);
    stem_bn.collect("encoder.stem_bn", ps);
    for (size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect("encoder.block" + std::to_string(i), ps);
  }
};

template <class T>
struct ProjectionHead {
  GeMPoolLayer<T> gem;
  LinearLayer<T> fc;
  BatchNormLayer<T> bn;
  PReLULayer<T> act;

  ProjectionHead() = default;
  ProjectionHead(const ModelConfig& cfg, Rng& rng)
      : gem(cfg.gem_p_init), fc(cfg.channels.back(), cfg.embedding_dim, rng),
        bn(cfg.embedding_dim) {}

  // h: [B, C_N, H, W] -> embeddings [B, D]
  NodePtr<T> forward(const NodePtr<T>& h, bool training) {
    return act.forward(bn.forward(fc.forward(gem.forward4(h)), training));
  }

  void collect(ParamSet<T>& ps) {
    gem.collect("head.gem", ps);
    fc.collect("head.fc", ps);
    bn.collect("head.bn", ps);
    act.collect("head.act", ps);
  }
};

// Full recognition model: encoder + projection head.
template <class T>
struct Model {
  ModelConfig cfg;
  Encoder<T> encoder;
  ProjectionHead<T> head;

  Model() = default;
  Model(const ModelConfig& cfg_, Rng& rng) : cfg(cfg_), encoder(cfg_, rng), head(cfg_, rng) {}

  struct Out {
    NodePtr<T> embeddings;               // [B, D]
    std::vector<NodePtr<T>> attention;   // per block
  };

  Out forward(const NodePtr<T>& images, bool training) {
    auto enc = encoder.forward(images, training);
    return {head.forward(enc.h, training), std::move(enc.attention)};
  }

  ParamSet<T> parameters() {
    ParamSet<T> ps;
    encoder.collect(ps);
    head.collect(ps);
    return ps;
  }
};

}  // namespace nn
}  // namespace marsrec
