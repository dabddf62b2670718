#include <doctest.h>

#include <cmath>
#include <set>

#include "marsrec/backbone.hpp"
#include "testutil.hpp"

using namespace marsrec;
using ad::NodePtr;
using testutil::fd_check;
using testutil::rand_tensor;

namespace {

ModelConfig desk_config(const std::string& conv, const std::string& attn) {
  ModelConfig cfg;
  cfg.conv_kind = conv;
  cfg.attention_kind = attn;
  return cfg;
}

ModelConfig tiny_config(const std::string& conv, const std::string& attn) {
  ModelConfig cfg;
  cfg.conv_kind = conv;
  cfg.attention_kind = attn;
  cfg.num_blocks = 2;
  cfg.channels = {8, 16};
  cfg.embedding_dim = 4;
  cfg.input_h = cfg.input_w = 16;
  return cfg;
}

template <class T>
Tensor<T> rand_image_batch(int b, int h, int w, Rng& rng) {
  Tensor<T> t({b, 1, h, w});
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform());
  return t;
}

// Quarter turn counter-clockwise per channel: out(r,c) = in(c, W-1-r).
template <class T>
Tensor<T> rot90_batch(const Tensor<T>& x) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({B, C, W, H});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < W; ++r)
        for (int cc = 0; cc < H; ++cc) out.at(b, c, r, cc) = x.at(b, c, cc, W - 1 - r);
  return out;
}

template <class T>
double rel_l2(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.size() == b.size());
  double num = 0, den = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    num += d * d;
    den += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  return std::sqrt(num / std::max(den, 1e-30));
}

}  // namespace

TEST_CASE("model config validation rejects inconsistent settings") {
  ModelConfig ok;
  ok.validate();

  ModelConfig c1 = ok;
  c1.mars_enabled = true;
  c1.attention_kind = "se";
  CHECK_THROWS_AS(c1.validate(), ConfigError);
  c1.attention_kind = "ca";
  c1.validate();

  ModelConfig c2 = ok;
  c2.reduction_r = 3;  // does not divide 32
  CHECK_THROWS_AS(c2.validate(), ConfigError);

  ModelConfig c3 = ok;
  c3.channels = {32, 64};
  CHECK_THROWS_AS(c3.validate(), ConfigError);

  ModelConfig c4 = ok;
  c4.input_h = 60;
  CHECK_THROWS_AS(c4.validate(), ConfigError);

  ModelConfig c5 = ok;
  c5.conv_kind = "dilated";
  CHECK_THROWS_AS(c5.validate(), ConfigError);

  ModelConfig c6 = ok;
  c6.channels = {32, 64, 128, 252};  // 252 not divisible by 2*cardinality=8
  CHECK_THROWS_AS(c6.validate(), ConfigError);

  ModelConfig c7 = ok;
  c7.gem_p_init = 0.5;
  CHECK_THROWS_AS(c7.validate(), ConfigError);

  ModelConfig c8 = ok;
  c8.num_blocks = 0;
  c8.channels = {};
  CHECK_THROWS_AS(c8.validate(), ConfigError);
}

TEST_CASE("encoder produces the documented feature pyramid for every variant") {
  Rng data_rng(41);
  auto imgs = rand_image_batch<float>(2, 64, 64, data_rng);

  for (const char* conv : {"standard", "ric"}) {
    for (const char* attn : {"se", "ca"}) {
      CAPTURE(conv);
      CAPTURE(attn);
      Rng rng(7);
      nn::Model<float> model(desk_config(conv, attn), rng);
      auto out = model.forward(ad::leaf(imgs), false);

      REQUIRE(out.attention.size() == 4);
      const int want_ch[4] = {32, 64, 128, 256};
      const int want_hw[4] = {16, 8, 4, 2};
      for (int i = 0; i < 4; ++i) {
        const auto& s = out.attention[i]->value.shape();
        CHECK(s == std::vector<int>{2, want_ch[i], want_hw[i], want_hw[i]});
      }
      CHECK(out.embeddings->value.shape() == std::vector<int>{2, 128});
      for (int64_t i = 0; i < out.embeddings->value.size(); ++i)
        CHECK(std::isfinite(out.embeddings->value[i]));
    }
  }
}

TEST_CASE("encoder rejects input at the wrong resolution") {
  Rng rng(11);
  nn::Encoder<float> enc(desk_config("standard", "se"), rng);
  Rng data_rng(12);
  auto bad = rand_image_batch<float>(1, 32, 32, data_rng);
  CHECK_THROWS_AS(enc.forward(ad::leaf(bad), false), InputError);
  Tensor<float> two_ch({1, 2, 64, 64});
  CHECK_THROWS_AS(enc.forward(ad::leaf(two_ch), false), InputError);
}

TEST_CASE("attention gates lie strictly inside the unit interval") {
  Rng rng(21);
  nn::SEBlock<float> se(16, 4, rng);
  nn::CABlock<float> ca(16, rng);
  Rng data_rng(22);
  auto x = ad::leaf(rand_tensor({3, 16, 5, 5}, data_rng).cast<float>());

  auto g = se.gate(x);
  for (int64_t i = 0; i < g->value.size(); ++i) {
    CHECK(g->value[i] > 0.0f);
    CHECK(g->value[i] < 1.0f);
  }
  auto cg = ca.gates(x, false);
  for (auto& node : {cg.gh, cg.gw})
    for (int64_t i = 0; i < node->value.size(); ++i) {
      CHECK(node->value[i] > 0.0f);
      CHECK(node->value[i] < 1.0f);
    }
}

TEST_CASE("squeeze gate is exactly one half for zero input and zero biases") {
  Rng rng(23);
  nn::SEBlock<float> se(8, 4, rng);
  se.fc1.bias->value.fill(0.0f);
  se.fc2.bias->value.fill(0.0f);
  Tensor<float> zeros({2, 8, 4, 4});
  auto g = se.gate(ad::leaf(zeros));
  for (int64_t i = 0; i < g->value.size(); ++i) CHECK(g->value[i] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("coordinate gates are constant for spatially constant input") {
  Rng rng(24);
  nn::CABlock<float> ca(16, rng);
  Tensor<float> x({2, 16, 6, 6});
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 16; ++c)
      for (int r = 0; r < 6; ++r)
        for (int cc = 0; cc < 6; ++cc) x.at(b, c, r, cc) = 0.1f * c + 0.3f * b;

  auto g = ca.gates(ad::leaf(x), false);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 16; ++c) {
      for (int h = 1; h < 6; ++h)
        CHECK(g.gh->value.at(b, c, h) == doctest::Approx(g.gh->value.at(b, c, 0)).epsilon(1e-6));
      for (int w = 1; w < 6; ++w)
        CHECK(g.gw->value.at(b, c, w) == doctest::Approx(g.gw->value.at(b, c, 0)).epsilon(1e-6));
    }
}

TEST_CASE("coordinate gates swap axes when input is transposed and heads share weights") {
  Rng rng(25);
  nn::CABlock<double> ca(8, rng);
  // Tie the two axis heads so the only asymmetry left is the input itself.
  ca.w_w->value = ca.w_h->value;
  ca.b_w->value = ca.b_h->value;

  Rng data_rng(26);
  auto xt = rand_tensor({1, 8, 5, 5}, data_rng);
  Tensor<double> xtr({1, 8, 5, 5});
  for (int c = 0; c < 8; ++c)
    for (int r = 0; r < 5; ++r)
      for (int cc = 0; cc < 5; ++cc) xtr.at(0, c, r, cc) = xt.at(0, c, cc, r);

  auto g1 = ca.gates(ad::leaf(xt), false);
  auto g2 = ca.gates(ad::leaf(xtr), false);
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 5; ++i) {
      CHECK(g2.gh->value.at(0, c, i) == doctest::Approx(g1.gw->value.at(0, c, i)).epsilon(1e-9));
      CHECK(g2.gw->value.at(0, c, i) == doctest::Approx(g1.gh->value.at(0, c, i)).epsilon(1e-9));
    }
}

TEST_CASE("rotation-equivariant convolution commutes with quarter turns, standard does not") {
  Rng rng(31);
  nn::Conv2dLayer<double> ric(2, 3, 3, 1, 1, 1, ad::ConvKind::ric, false, rng);
  nn::Conv2dLayer<double> std_conv(2, 3, 3, 1, 1, 1, ad::ConvKind::standard, false, rng);
  std_conv.weight->value = ric.weight->value;

  Rng data_rng(32);
  auto x = rand_tensor({1, 2, 8, 8}, data_rng, 0.0, 1.0);

  auto y_ric = ric.forward(ad::leaf(x))->value;
  auto y_std = std_conv.forward(ad::leaf(x))->value;

  Tensor<double> xr = x;
  Tensor<double> yr_ric = y_ric;
  Tensor<double> yr_std = y_std;
  for (int turn = 1; turn <= 3; ++turn) {
    xr = rot90_batch(xr);
    yr_ric = rot90_batch(yr_ric);
    yr_std = rot90_batch(yr_std);

    const double err_ric = rel_l2(ric.forward(ad::leaf(xr))->value, yr_ric);
    const double err_std = rel_l2(std_conv.forward(ad::leaf(xr))->value, yr_std);
    CAPTURE(turn);
    CHECK(err_ric <= 0.05);
    CHECK(err_ric <= 1e-6);  // quarter turns map the sample lattice onto itself
    CHECK(err_std > 0.05);
  }
}

TEST_CASE("identical batch rows produce identical embeddings") {
  Rng rng(51);
  nn::Model<float> model(tiny_config("standard", "ca"), rng);
  Rng data_rng(52);
  auto one = rand_image_batch<float>(1, 16, 16, data_rng);
  Tensor<float> batch({3, 1, 16, 16});
  for (int b = 0; b < 3; ++b)
    for (int64_t i = 0; i < one.size(); ++i) batch[b * one.size() + i] = one[i];

  auto out = model.forward(ad::leaf(batch), true);
  const auto& e = out.embeddings->value;
  for (int b = 1; b < 3; ++b)
    for (int d = 0; d < e.dim(1); ++d) CHECK(e.at(b, d) == e.at(0, d));
}

TEST_CASE("projection head gradients match finite differences") {
  Rng rng(61);
  ModelConfig cfg = tiny_config("standard", "se");
  nn::ProjectionHead<double> head(cfg, rng);
  Rng data_rng(62);
  auto h = ad::leaf(rand_tensor({3, 16, 2, 2}, data_rng, 0.1, 1.0), true);
  auto r = ad::constant(rand_tensor({3, 4}, data_rng));

  fd_check({h, head.fc.weight, head.fc.bias, head.bn.gamma, head.bn.beta, head.gem.p,
            head.act.alpha},
           [&] { return ad::sum_all(ad::mul(head.forward(h, true), r)); });
}

TEST_CASE("full model gradients match finite differences on a tiny configuration") {
  Rng rng(71);
  nn::Model<double> model(tiny_config("ric", "ca"), rng);
  Rng data_rng(72);
  auto imgs = ad::leaf(rand_tensor({2, 1, 16, 16}, data_rng, 0.05, 0.95), true);
  auto r = ad::constant(rand_tensor({2, 4}, data_rng));

  std::vector<NodePtr<double>> leaves = {
      imgs,
      model.encoder.stem.weight,
      model.encoder.blocks[0].conv2.weight,
      model.encoder.blocks[0].ca.w_trunk,
      model.encoder.blocks[1].bn3.gamma,
      model.head.fc.weight,
      model.head.gem.p,
  };
  fd_check(leaves, [&] { return ad::sum_all(ad::mul(model.forward(imgs, true).embeddings, r)); },
           1e-3, 1e-6, 10);
}

TEST_CASE("initialization is reproducible from the seed") {
  ModelConfig cfg = tiny_config("standard", "ca");
  Rng r1(99), r2(99), r3(100);
  nn::Model<float> a(cfg, r1), b(cfg, r2), c(cfg, r3);

  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.params.size() == pb.params.size());
  REQUIRE(pa.params.size() == pc.params.size());

  bool any_diff_seed = false;
  for (size_t i = 0; i < pa.params.size(); ++i) {
    CHECK(pa.params[i].first == pb.params[i].first);
    const auto& ta = pa.params[i].second->value;
    const auto& tb = pb.params[i].second->value;
    const auto& tc = pc.params[i].second->value;
    for (int64_t j = 0; j < ta.size(); ++j) {
      CHECK(ta[j] == tb[j]);
      if (ta[j] != tc[j]) any_diff_seed = true;
    }
  }
  CHECK(any_diff_seed);

  // Parameter names are unique so checkpoints can address tensors by name.
  std::set<std::string> names;
  for (auto& [name, node] : pa.params) names.insert(name);
  CHECK(names.size() == pa.params.size());
}
