#include <doctest.h>

#include <cmath>

#include "marsrec/mars.hpp"
#include "testutil.hpp"

using namespace marsrec;
using ad::NodePtr;
using testutil::fd_check;
using testutil::rand_tensor;

namespace {

ModelConfig one_block_config() {
  ModelConfig cfg;
  cfg.attention_kind = "ca";
  cfg.mars_enabled = true;
  cfg.num_blocks = 1;
  cfg.channels = {8};
  cfg.reduction_r = 2;
  cfg.embedding_dim = 4;
  cfg.input_h = cfg.input_w = 16;
  return cfg;
}

// Identity reducer so head arithmetic is exposed directly.
template <class T>
void make_reducer_identity(MarsBlock<T>& blk, int ch) {
  blk.reducer.weight->value.fill(T(0));
  for (int c = 0; c < ch; ++c) blk.reducer.weight->value.at(c, c, 0, 0) = T(1);
  blk.reducer.bias->value.fill(T(0));
}

Tensor<double> positive_maps(const std::vector<int>& shape, Rng& rng) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.05, 1.0);
  return t;
}

}  // namespace

TEST_CASE("pose normalization returns twin attention maps to a shared pose") {
  const int mh = 16, mw = 16;
  Tensor<double> base({1, mh, mw});
  for (int r = 0; r < mh; ++r)
    for (int c = 0; c < mw; ++c)
      base.at(0, r, c) = 0.5 + 0.3 * std::sin(2 * M_PI * r / mh) * std::cos(2 * M_PI * c / mw);

  TransformSpec t1, t2;
  t1.rotation_deg = 40.0;
  t1.translate_y = 2.0;
  t1.translate_x = -3.0;
  t1.ref_h = t1.ref_w = 64;
  t2.rotation_deg = 130.0;
  t2.translate_y = -4.0;
  t2.translate_x = 1.0;
  t2.ref_h = t2.ref_w = 64;

  Tensor<double> batch({2, 1, mh, mw});
  Tensor<double> support({2, 1, mh, mw});
  Tensor<double> ones({1, mh, mw});
  ones.fill(1.0);
  const TransformSpec specs[2] = {t1, t2};
  for (int v = 0; v < 2; ++v) {
    auto view = apply_transform(base, rescale_to_resolution(specs[v], mh, mw));
    auto sup = apply_transform(ones, rescale_to_resolution(specs[v], mh, mw));
    // Track interpolation support through the same normalizing warp the
    // module applies, to know which output pixels are fully determined.
    auto sup_back = apply_transform(sup, pose_normalizer(specs[v], mh, mw));
    for (int r = 0; r < mh; ++r)
      for (int c = 0; c < mw; ++c) {
        batch.at(v, 0, r, c) = view.at(0, r, c);
        support.at(v, 0, r, c) = sup_back.at(0, r, c);
      }
  }

  auto normalized = pose_normalize(ad::leaf(batch), {t1, t2});

  int checked = 0;
  double worst = 0;
  for (int v = 0; v < 2; ++v)
    for (int r = 0; r < mh; ++r)
      for (int c = 0; c < mw; ++c) {
        if (support.at(v, 0, r, c) < 0.999) continue;
        ++checked;
        worst = std::max(worst, std::abs(normalized->value.at(v, 0, r, c) - base.at(0, r, c)));
      }
  CHECK(checked > 100);
  CHECK(worst <= 0.02);
}

TEST_CASE("regularizer terms match hand-computed values on a fixed pair") {
  Rng rng(5);
  MarsBlock<double> blk(2, 1, 3.0, rng);
  make_reducer_identity(blk, 2);

  Tensor<double> rows({2, 2, 2, 2},
                      {// view A: ch0, ch1
                       1.0, 0.2, 0.4, 0.0, 0.0, 0.6, 0.3, 0.1,
                       // view B
                       0.1, 0.9, 0.0, 0.2, 0.7, 0.0, 0.5, 0.4});
  auto terms = blk.forward(ad::leaf(rows), false);

  CHECK(terms.ch->value[0] == doctest::Approx(0.016662272382212295).epsilon(1e-10));
  CHECK(terms.sp->value[0] == doctest::Approx(0.10970939330735807).epsilon(1e-10));
  auto weighted = mars_loss<double>(terms, 0.15, 0.15);
  CHECK(weighted->value[0] == doctest::Approx(0.018955749853435552).epsilon(1e-10));
}

TEST_CASE("height head sees energy placement that the width head cannot") {
  Rng rng(6);
  MarsBlock<double> blk(2, 1, 3.0, rng);
  make_reducer_identity(blk, 2);

  // Same mass per column: top-heavy map vs bottom-heavy map.
  Tensor<double> rows({2, 2, 4, 4});
  for (int c = 0; c < 2; ++c)
    for (int w = 0; w < 4; ++w) {
      rows.at(0, c, 0, w) = 0.8;
      rows.at(1, c, 2, w) = 0.4;
      rows.at(1, c, 3, w) = 0.4;
    }

  auto e = blk.embed(ad::leaf(rows), false);
  double dy = 0, dx = 0;
  for (int c = 0; c < 2; ++c) {
    dy = std::max(dy, std::abs(e.zy->value.at(0, c) - e.zy->value.at(1, c)));
    dx = std::max(dx, std::abs(e.zx->value.at(0, c) - e.zx->value.at(1, c)));
  }
  CHECK(dy > 0.05);
  CHECK(dx == 0.0);  // column means agree exactly, so the width head cannot differ
}

TEST_CASE("channel head ignores spatial layout") {
  Rng rng(7);
  MarsBlock<double> blk(2, 1, 3.0, rng);
  make_reducer_identity(blk, 2);

  Rng drng(8);
  Tensor<double> m = positive_maps({1, 2, 3, 3}, drng);
  Tensor<double> scrambled = m;
  // Reverse the flattened spatial order of every channel.
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i)
      scrambled[static_cast<int64_t>(c) * 9 + i] = m[static_cast<int64_t>(c) * 9 + (8 - i)];

  auto e1 = blk.embed(ad::leaf(m), false);
  auto e2 = blk.embed(ad::leaf(scrambled), false);
  for (int c = 0; c < 2; ++c)
    CHECK(e1.zc->value.at(0, c) == doctest::Approx(e2.zc->value.at(0, c)).epsilon(1e-13));
}

TEST_CASE("regularizer is symmetric in pair order and bounded") {
  Rng rng(9);
  MarsBlock<double> blk(4, 2, 3.0, rng);

  Rng drng(10);
  for (int trial = 0; trial < 8; ++trial) {
    auto rows = positive_maps({4, 4, 5, 5}, drng);
    Tensor<double> swapped = rows;
    const int64_t per = rows.size() / 4;
    for (int pair = 0; pair < 2; ++pair)
      for (int64_t i = 0; i < per; ++i) {
        swapped[(2 * pair) * per + i] = rows[(2 * pair + 1) * per + i];
        swapped[(2 * pair + 1) * per + i] = rows[(2 * pair) * per + i];
      }

    auto t1 = blk.forward(ad::leaf(rows), false);
    auto t2 = blk.forward(ad::leaf(swapped), false);
    CHECK(t1.ch->value[0] == doctest::Approx(t2.ch->value[0]).epsilon(1e-11));
    CHECK(t1.sp->value[0] == doctest::Approx(t2.sp->value[0]).epsilon(1e-11));

    CHECK(t1.ch->value[0] >= 0.0);
    CHECK(t1.ch->value[0] <= 2.0);
    CHECK(t1.sp->value[0] >= 0.0);
    CHECK(t1.sp->value[0] <= 4.0);
    auto weighted = mars_loss<double>(t1, 0.15, 0.15);
    CHECK(weighted->value[0] <= 0.15 * 2 + 0.15 * 4);
  }
}

TEST_CASE("empty twin set yields zero regularizer and no parameter gradients") {
  Rng rng(11);
  ModelConfig cfg = one_block_config();
  MarsRegularizer<double> reg(cfg, rng);

  Rng drng(12);
  auto maps = positive_maps({4, 8, 4, 4}, drng);
  std::vector<TransformSpec> specs(4);
  for (auto& s : specs) s.ref_h = s.ref_w = 16;

  auto out = reg.forward({ad::leaf(maps)}, specs, {}, true);
  CHECK(out.total->value[0] == 0.0);
  REQUIRE(out.block_ch.size() == 1);
  CHECK(out.block_ch[0] == 0.0);
  CHECK(out.block_sp[0] == 0.0);

  // The zero term contributes nothing to the objective's gradient.
  auto ml = ad::leaf(Tensor<double>::scalar(0.5), true);
  auto obj = total_objective<double>(ad::scale(ml, 1.0), {out.total});
  ad::backward(obj);
  CHECK(ml->grad[0] == 1.0);
  CHECK_FALSE(reg.blocks[0].reducer.weight->grad_alloc);
}

TEST_CASE("objective is the metric loss plus every block term") {
  auto ml = ad::leaf(Tensor<double>::scalar(0.7));
  auto t1 = ad::leaf(Tensor<double>::scalar(0.1));
  auto t2 = ad::leaf(Tensor<double>::scalar(0.2));
  auto total = total_objective<double>(ml, {t1, t2});
  CHECK(total->value[0] == doctest::Approx(1.0).epsilon(1e-15));

  // Against the regularizer's own per-block records.
  Rng rng(13);
  ModelConfig cfg = one_block_config();
  MarsRegularizer<double> reg(cfg, rng);
  Rng drng(14);
  auto maps = positive_maps({6, 8, 4, 4}, drng);
  std::vector<TransformSpec> specs(6);
  for (auto& s : specs) {
    s.rotation_deg = drng.uniform(0.0, 360.0);
    s.translate_y = drng.uniform(-1.5, 1.5);
    s.translate_x = drng.uniform(-1.5, 1.5);
    s.ref_h = s.ref_w = 16;
  }
  auto out = reg.forward({ad::leaf(maps)}, specs, {{0, 3}, {4, 2}}, false);
  double expect = 0;
  for (size_t i = 0; i < out.block_ch.size(); ++i)
    expect += cfg.gamma_ch * out.block_ch[i] + cfg.gamma_sp * out.block_sp[i];
  CHECK(out.total->value[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("regularizer gradients flow through warp, reducer, and heads") {
  Rng rng(15);
  ModelConfig cfg = one_block_config();
  MarsRegularizer<double> reg(cfg, rng);

  Rng drng(16);
  auto maps = ad::leaf(positive_maps({6, 8, 4, 4}, drng), true);
  std::vector<TransformSpec> specs(6);
  for (auto& s : specs) {
    s.rotation_deg = drng.uniform(10.0, 80.0);
    s.translate_y = drng.uniform(-1.3, 1.3);
    s.translate_x = drng.uniform(-1.3, 1.3);
    s.ref_h = s.ref_w = 16;
  }
  const std::vector<std::pair<int, int>> pairs{{0, 3}, {4, 2}};

  auto& blk = reg.blocks[0];
  fd_check({maps, blk.reducer.weight, blk.reducer.bias, blk.gc.gem.p, blk.gy.bn.gamma,
            blk.gx.act.alpha},
           [&] { return reg.forward({maps}, specs, pairs, true).total; }, 1e-4);
}

TEST_CASE("regularizer rejects malformed pairing") {
  Rng rng(17);
  ModelConfig cfg = one_block_config();
  MarsRegularizer<double> reg(cfg, rng);
  Rng drng(18);
  auto maps = ad::leaf(positive_maps({4, 8, 4, 4}, drng));
  std::vector<TransformSpec> specs(4);
  for (auto& s : specs) s.ref_h = s.ref_w = 16;

  CHECK_THROWS_AS(reg.forward({maps}, specs, {{0, 4}}, false), InputError);
  CHECK_THROWS_AS(reg.forward({maps}, specs, {{2, 2}}, false), InputError);
  CHECK_THROWS_AS(reg.forward({maps, maps}, specs, {{0, 1}}, false), InputError);

  Rng rng2(19);
  CHECK_THROWS_AS(MarsBlock<double>(6, 4, 3.0, rng2), ConfigError);
}
