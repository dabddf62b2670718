#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "marsrec/autodiff/conv.hpp"
#include "marsrec/autodiff/ops.hpp"
#include "marsrec/rng.hpp"

namespace marsrec::nn {

using ad::NodePtr;

// Named views of everything a model owns: differentiable parameters and
// the plain buffers (batch-norm running stats) that ride along in
// checkpoints.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, NodePtr<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add(const std::string& name, const NodePtr<T>& p) { params.emplace_back(name, p); }
  void add_buffer(const std::string& name, Tensor<T>* t) { buffers.emplace_back(name, t); }
};

template <class T>
Tensor<T> gaussian_init(const std::vector<int>& shape, double std, Rng& rng) {
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.gaussian() * std);
  return t;
}

template <class T>
Tensor<T> uniform_init(const std::vector<int>& shape, double bound, Rng& rng) {
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
struct Conv2dLayer {
  int in_ch = 0, out_ch = 0, k = 1, stride = 1, pad = 0, groups = 1;
  ad::ConvKind kind = ad::ConvKind::standard;
  NodePtr<T> weight, bias;  // bias may be null
  std::unordered_map<int64_t, std::shared_ptr<ad::ConvTaps>> tap_cache;

  Conv2dLayer() = default;
  Conv2dLayer(int in, int out, int k_, int stride_, int pad_, int groups_, ad::ConvKind kind_,
              bool with_bias, Rng& rng)
      : in_ch(in), out_ch(out), k(k_), stride(stride_), pad(pad_), groups(groups_), kind(kind_) {
    if (in % groups != 0 || out % groups != 0)
      throw ConfigError("conv layer: channels must divide groups");
    const double fan_in = static_cast<double>(in / groups) * k * k;
    weight = ad::leaf(gaussian_init<T>({out, in / groups, k_, k_}, std::sqrt(2.0 / fan_in), rng),
                      true);
    if (with_bias) {
      Tensor<T> b({out});
      b.fill(T(0));
      bias = ad::leaf(std::move(b), true);
    }
  }

  NodePtr<T> forward(const NodePtr<T>& x) {
    const int h = x->value.dim(2), w = x->value.dim(3);
    const int64_t key = (static_cast<int64_t>(h) << 32) | static_cast<uint32_t>(w);
    auto it = tap_cache.find(key);
    if (it == tap_cache.end())
      it = tap_cache.emplace(key, ad::build_conv_taps(kind, h, w, k, stride, pad)).first;
    return ad::conv2d(x, weight, bias, it->second, groups);
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".weight", weight);
    if (bias) ps.add(prefix + ".bias", bias);
  }
};

template <class T>
struct BatchNormLayer {
  NodePtr<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double momentum = 0.1, eps = 1e-5;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int ch) {
    gamma = ad::leaf(Tensor<T>::full({ch}, T(1)), true);
    beta = ad::leaf(Tensor<T>::full({ch}, T(0)), true);
    running_mean = Tensor<T>({ch});
    running_var = Tensor<T>::full({ch}, T(1));
  }

  NodePtr<T> forward(const NodePtr<T>& x, bool training) {
    return ad::batchnorm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
    ps.add_buffer(prefix + ".running_mean", &running_mean);
    ps.add_buffer(prefix + ".running_var", &running_var);
  }
};

template <class T>
struct LinearLayer {
  NodePtr<T> weight, bias;  // weight [in, out]

  LinearLayer() = default;
  LinearLayer(int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = ad::leaf(uniform_init<T>({in, out}, bound, rng), true);
    bias = ad::leaf(uniform_init<T>({out}, bound, rng), true);
  }

  NodePtr<T> forward(const NodePtr<T>& x) { return ad::linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

template <class T>
struct PReLULayer {
  NodePtr<T> alpha;

  PReLULayer() { alpha = ad::leaf(Tensor<T>::scalar(T(0.25)), true); }

  NodePtr<T> forward(const NodePtr<T>& x) { return ad::prelu(x, alpha); }

  void collect(const std::string& prefix, ParamSet<T>& ps) { ps.add(prefix + ".alpha", alpha); }
};

template <class T>
struct GeMPoolLayer {
  NodePtr<T> p;
  double eps = 1e-6;

  GeMPoolLayer() = default;
  explicit GeMPoolLayer(double p_init) {
    if (p_init < 1.0) throw ConfigError("gem pool: initial p must be >= 1");
    p = ad::leaf(Tensor<T>::scalar(static_cast<T>(p_init)), true);
  }

  // [B,C,L] -> [B,C]
  NodePtr<T> forward(const NodePtr<T>& x) { return ad::gem_pool(x, p, eps); }

  // [B,C,H,W] -> [B,C]
  NodePtr<T> forward4(const NodePtr<T>& x) {
    const auto& s = x->value.shape();
    return ad::gem_pool(ad::reshape(x, {s[0], s[1], s[2] * s[3]}), p, eps);
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) { ps.add(prefix + ".p", p); }
};

// Channel gating from a squeezed global descriptor.
template <class T>
struct SEBlock {
  LinearLayer<T> fc1, fc2;

  SEBlock() = default;
  SEBlock(int ch, int reduction, Rng& rng)
      : fc1(ch, std::max(1, ch / reduction), rng), fc2(std::max(1, ch / reduction), ch, rng) {}

  // Per-channel gate in (0,1), [B,C].
  NodePtr<T> gate(const NodePtr<T>& x) {
    auto s = ad::global_mean_hw(x);
    return ad::sigmoid(fc2.forward(ad::relu(fc1.forward(s))));
  }

  // Returns the gated feature; the attention map IS this tensor.
  NodePtr<T> forward(const NodePtr<T>& x, bool /*training*/) {
    return ad::mul_gate_c(x, gate(x));
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) {
    fc1.collect(prefix + ".fc1", ps);
    fc2.collect(prefix + ".fc2", ps);
  }
};

// Coordinate attention: strip-pooled descriptors pass a shared bottleneck,
// then split into per-axis gates.
template <class T>
struct CABlock {
  int ch = 0, mid = 0;
  NodePtr<T> w_trunk, b_trunk;  // [mid, C], [mid]
  BatchNormLayer<T> bn;
  NodePtr<T> w_h, b_h;  // [C, mid]
  NodePtr<T> w_w, b_w;

  CABlock() = default;
  CABlock(int ch_, Rng& rng) : ch(ch_), mid(std::max(8, ch_ / 8)), bn(std::max(8, ch_ / 8)) {
    const double s_tr = std::sqrt(2.0 / ch);
    w_trunk = ad::leaf(gaussian_init<T>({mid, ch}, s_tr, rng), true);
    b_trunk = ad::leaf(Tensor<T>({mid}), true);
    const double s_g = std::sqrt(2.0 / mid);
    w_h = ad::leaf(gaussian_init<T>({ch, mid}, s_g, rng), true);
    b_h = ad::leaf(Tensor<T>({ch}), true);
    w_w = ad::leaf(gaussian_init<T>({ch, mid}, s_g, rng), true);
    b_w = ad::leaf(Tensor<T>({ch}), true);
  }

  struct Gates {
    NodePtr<T> gh;  // [B,C,H]
    NodePtr<T> gw;  // [B,C,W]
  };

  Gates gates(const NodePtr<T>& x, bool training) {
    const int H = x->value.dim(2), W = x->value.dim(3);
    auto xh = ad::mean_over_w(x);  // [B,C,H]
    auto xw = ad::mean_over_h(x);  // [B,C,W]
    auto cat = ad::concat_last(xh, xw);
    auto t = ad::relu(bn.forward(ad::pointwise_linear(cat, w_trunk, b_trunk), training));
    auto th = ad::slice_last(t, 0, H);
    auto tw = ad::slice_last(t, H, W);
    return {ad::sigmoid(ad::pointwise_linear(th, w_h, b_h)),
            ad::sigmoid(ad::pointwise_linear(tw, w_w, b_w))};
  }

  NodePtr<T> forward(const NodePtr<T>& x, bool training) {
    auto g = gates(x, training);
    return ad::mul_gate_w(ad::mul_gate_h(x, g.gh), g.gw);
  }

  void collect(const std::string& prefix, ParamSet<T>& ps) {
    ps.add(prefix + ".w_trunk", w_trunk);
    ps.add(prefix + ".b_trunk", b_trunk);
    bn.collect(prefix + ".bn", ps);
    ps.add(prefix + ".w_h", w_h);
    ps.add(prefix + ".b_h", b_h);
    ps.add(prefix + ".w_w", w_w);
    ps.add(prefix + ".b_w", b_w);
  }
};

}  // namespace marsrec::nn
