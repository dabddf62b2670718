#include "marsrec/evaluator.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "marsrec/rng.hpp"

using namespace marsrec;

namespace {

Embedder one_hot_oracle(int dim) {
  return [dim](const Image&, int id) {
    Embedding e(dim, 0.0);
    e.at(id) = 1.0;
    return e;
  };
}

Embedder constant_embedder() {
  return [](const Image&, int) { return Embedding{0.6, 0.8}; };
}

// Weak but honest embedder: coarse downsampled pixels.
Embedder pixel_embedder() {
  return [](const Image& img, int) {
    const Image small = resize_bilinear(img, 3, 3);
    Embedding e(small.vec().begin(), small.vec().end());
    return e;
  };
}

Image random_image(int res, uint64_t seed) {
  Rng rng(seed);
  Image img({res, res});
  for (auto& v : img.vec()) v = static_cast<float>(rng.uniform(0.1, 0.9));
  return img;
}

}  // namespace

TEST_CASE("the gallery matches stored vectors and breaks ties by age") {
  EmbeddingDB db(0.9);
  CHECK(db.size() == 0);
  CHECK_FALSE(db.query({1.0, 0.0}).matched);  // empty db → no match

  db.enroll({1.0, 0.0}, 7);
  db.enroll({0.8, 0.6}, 8);
  auto m = db.query({1.0, 0.0});
  REQUIRE(m.matched);
  CHECK(m.id == 7);
  CHECK(m.similarity == doctest::Approx(1.0).epsilon(1e-12));

  // Similarities 0.95 vs ~0.947: the first entry wins.
  auto n = db.query({0.95, 0.312});
  REQUIRE(n.matched);
  CHECK(n.id == 7);
  CHECK(n.similarity == doctest::Approx(0.95).epsilon(1e-3));

  // Exact tie: two identical entries, earliest id returned.
  EmbeddingDB tie(0.5);
  tie.enroll({0.0, 1.0}, 3);
  tie.enroll({0.0, 1.0}, 4);
  CHECK(tie.query({0.0, 2.0}).id == 3);
}

TEST_CASE("the gallery applies its threshold inclusively") {
  EmbeddingDB db(0.9);
  db.enroll({1.0, 0.0}, 1);
  const double s = 0.9, c = std::sqrt(1 - s * s);
  CHECK(db.query({s, c}).matched);  // similarity == threshold counts
  CHECK_FALSE(db.query({0.5, std::sqrt(0.75)}).matched);
  CHECK(db.nearest({0.5, std::sqrt(0.75)}).matched);  // nearest ignores it
}

TEST_CASE("gallery queries are invariant to positive rescaling") {
  EmbeddingDB db(0.9);
  db.enroll({3.0, 4.0}, 5);
  auto a = db.query({0.6, 0.8});
  auto b = db.query({6.0, 8.0});
  CHECK(a.id == b.id);
  CHECK(a.similarity == doctest::Approx(b.similarity).epsilon(1e-12));
}

TEST_CASE("the gallery rejects degenerate inputs") {
  CHECK_THROWS_AS(EmbeddingDB(0.0), ConfigError);
  CHECK_THROWS_AS(EmbeddingDB(1.5), ConfigError);
  CHECK_THROWS_AS(EmbeddingDB(-0.3), ConfigError);
  EmbeddingDB db(1.0);
  CHECK_THROWS_AS(db.enroll({0.0, 0.0}, 1), InputError);
  db.enroll({1.0, 0.0}, 1);
  CHECK_THROWS_AS(db.query({0.0, 0.0}), InputError);
  CHECK_THROWS_AS(db.query({1.0, 0.0, 0.0}), InputError);
}

TEST_CASE("recognition accuracy follows the count arithmetic") {
  CHECK(recognition_accuracy(3, 1, 1) == 60.0);
  CHECK(recognition_accuracy(5, 0, 0) == 100.0);
  CHECK(recognition_accuracy(0, 4, 1) == 0.0);
  CHECK(recognition_accuracy(0, 0, 0) == 0.0);
}

TEST_CASE("recall at one is perfect for an oracle and chance for a constant") {
  PatchDataset ds = synth_landmarks(8, 32, 5);
  std::vector<int> ids = {0, 1, 2, 3, 4, 5, 6, 7};
  TransformRanges ranges;

  CHECK(recall_at_1(ds, ids, one_hot_oracle(8), ranges, 1) == 100.0);

  // Constant embeddings tie everywhere; earliest enrollment wins every
  // query, so exactly one of n is correct.
  CHECK(recall_at_1(ds, ids, constant_embedder(), ranges, 1) == doctest::Approx(100.0 / 8));

  const double a = recall_at_1(ds, ids, pixel_embedder(), ranges, 7);
  const double b = recall_at_1(ds, ids, pixel_embedder(), ranges, 7);
  CHECK(a == b);
}

TEST_CASE("incremental recall scores an oracle embedder perfectly") {
  PatchDataset ds = synth_landmarks(6, 32, 2);
  std::vector<int> ids = {0, 1, 2, 3, 4, 5};
  RAReport r = incremental_recall(ds, ids, one_hot_oracle(6), TransformRanges{}, 0.9, 11);
  CHECK(r.correct == 6);
  CHECK(r.incorrect == 0);
  CHECK(r.missed == 0);
  CHECK(r.ra == 100.0);
  CHECK(r.protocol == "incremental");
  CHECK(r.seed == 11);
}

TEST_CASE("incremental recall on a constant embedder matches the hand simulation") {
  // All embeddings coincide: the first item enrolls, every later query
  // matches that entry. Exactly one later item carries the enrolled id.
  PatchDataset ds = synth_landmarks(5, 32, 3);
  std::vector<int> ids = {0, 1, 2, 3, 4};
  RAReport r = incremental_recall(ds, ids, constant_embedder(), TransformRanges{}, 0.9, 4);
  CHECK(r.correct == 1);
  CHECK(r.incorrect == 2 * 5 - 2);
  CHECK(r.missed == 0);
  CHECK(r.ra == doctest::Approx(100.0 / 9));
}

TEST_CASE("incremental recall is deterministic and rejects empty splits") {
  PatchDataset ds = synth_landmarks(6, 32, 2);
  std::vector<int> ids = {0, 1, 2, 3, 4, 5};
  RAReport a = incremental_recall(ds, ids, pixel_embedder(), TransformRanges{}, 0.9, 21);
  RAReport b = incremental_recall(ds, ids, pixel_embedder(), TransformRanges{}, 0.9, 21);
  CHECK(ra_report_json(a) == ra_report_json(b));
  CHECK_THROWS_AS(incremental_recall(ds, {}, pixel_embedder(), TransformRanges{}, 0.9, 1),
                  InputError);
}

TEST_CASE("suppression keeps and drops boxes by hand-computed overlap") {
  std::vector<BoundingBox> pair1 = {{0, 0, 10, 10, 1, 0.9}, {1, 1, 10, 10, 2, 0.8}};
  auto kept1 = nms(pair1, 0.5);  // IoU = 81/119 ≈ 0.681
  REQUIRE(kept1.size() == 1);
  CHECK(kept1[0].crater_id == 1);

  std::vector<BoundingBox> pair2 = {{0, 0, 10, 10, 1, 0.9}, {5, 5, 10, 10, 2, 0.8}};
  CHECK(nms(pair2, 0.5).size() == 2);  // IoU = 25/175 ≈ 0.143

  CHECK(nms({}, 0.5).empty());

  // IoU exactly at the threshold is not suppressed (strictly-greater rule).
  std::vector<BoundingBox> border = {{0, 0, 10, 20, 1, 0.9}, {0, 0, 10, 10, 2, 0.8}};
  CHECK(nms(border, 0.5).size() == 2);

  // Highest score first, regardless of input order.
  std::vector<BoundingBox> swapped = {{1, 1, 10, 10, 2, 0.8}, {0, 0, 10, 10, 1, 0.9}};
  auto kept2 = nms(swapped, 0.5);
  REQUIRE(kept2.size() == 1);
  CHECK(kept2[0].crater_id == 1);
}

TEST_CASE("moon navigation scores an oracle embedder perfectly") {
  PatchDataset ds = synth_landmarks(12, 32, 9);
  NavSequence seq = synth_navigation(ds, 8, 2, 64, 21);
  RAReport r = moon_navigation_eval(seq, one_hot_oracle(12), 32, TransformRanges{}, 0.9, 31);
  CHECK(r.incorrect == 0);
  CHECK(r.missed == 0);
  CHECK(r.ra == 100.0);
  CHECK(r.correct > 0);
  CHECK(r.protocol == "navigation");
}

TEST_CASE("moon navigation rejects sequences without annotations") {
  NavSequence bare;
  bare.frame_res = 32;
  bare.orbit_starts = {0};
  NavFrame f;
  f.image = random_image(32, 1);
  bare.frames.push_back(f);
  CHECK_THROWS_AS(moon_navigation_eval(bare, one_hot_oracle(4), 32, TransformRanges{}, 0.9, 1),
                  InputError);
}

TEST_CASE("moon navigation matches an independent protocol walkthrough") {
  PatchDataset ds = synth_landmarks(10, 32, 4);
  NavSequence seq = synth_navigation(ds, 10, 2, 64, 13);
  const Embedder embed = pixel_embedder();
  const TransformRanges ranges;
  const uint64_t seed = 99;
  const int res = 32;

  RAReport got = moon_navigation_eval(seq, embed, res, ranges, 0.9, seed);

  // Re-implementation from the protocol description, sharing only the
  // transform sampler's draw order with the production code.
  struct Entry {
    std::vector<double> v;
    int id;
  };
  std::vector<Entry> db;
  auto normalize = [](std::vector<double> v) {
    double sq = 0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    for (double& x : v) x = x / norm;
    return v;
  };
  int correct = 0, incorrect = 0, missed = 0;
  Rng rng(seed);
  for (size_t f = 0; f < seq.frames.size(); ++f) {
    // Greedy area-ranked suppression, written out longhand.
    std::vector<BoundingBox> ranked = seq.frames[f].boxes;
    std::stable_sort(ranked.begin(), ranked.end(), [](const BoundingBox& a, const BoundingBox& b) {
      return a.w * a.h > b.w * b.h;
    });
    std::vector<BoundingBox> kept;
    for (const auto& b : ranked) {
      bool drop = false;
      for (const auto& k : kept) {
        const double ix =
            std::max(0.0, std::min(b.x + b.w, k.x + k.w) - std::max(b.x, k.x));
        const double iy =
            std::max(0.0, std::min(b.y + b.h, k.y + k.h) - std::max(b.y, k.y));
        const double inter = ix * iy;
        if (inter / (b.w * b.h + k.w * k.h - inter) > 0.5) drop = true;
      }
      if (!drop) kept.push_back(b);
    }
    const Image frame = seq.frame_image(static_cast<int>(f));
    for (const auto& b : kept) {
      const Image crop = crop_clipped(frame, (int)std::lround(b.x), (int)std::lround(b.y),
                                      (int)std::lround(b.w), (int)std::lround(b.h));
      const TransformSpec t = sample_transform(rng, ranges, res, res);
      const Image view = apply_transform(resize_bilinear(crop, res, res), t);
      const std::vector<double> z = normalize(embed(view, b.crater_id));
      int best_id = -1;
      double best_sim = 0;
      bool any = false;
      for (const auto& e : db) {
        double s = 0;
        for (size_t d = 0; d < z.size(); ++d) s += e.v[d] * z[d];
        if (!any || s > best_sim) {
          best_sim = s;
          best_id = e.id;
          any = true;
        }
      }
      if (any && best_sim >= 0.9) {
        if (best_id == b.crater_id)
          ++correct;
        else
          ++incorrect;
      } else {
        bool seen = false;
        for (const auto& e : db) seen = seen || e.id == b.crater_id;
        if (seen) ++missed;
        db.push_back({z, b.crater_id});
      }
    }
  }
  CHECK(got.correct == correct);
  CHECK(got.incorrect == incorrect);
  CHECK(got.missed == missed);
  CHECK(got.ra == doctest::Approx(recognition_accuracy(correct, incorrect, missed)).epsilon(1e-12));
}

TEST_CASE("lost in space scores an oracle perfectly when orbits repeat") {
  PatchDataset ds = synth_landmarks(12, 32, 9);
  NavSequence seq = synth_navigation(ds, 12, 3, 64, 17);
  RAReport r = lost_in_space_eval(seq, one_hot_oracle(12), 32, TransformRanges{}, 0.9, 23);
  CHECK(r.incorrect == 0);
  CHECK(r.missed == 0);
  CHECK(r.ra == 100.0);
  CHECK(r.correct > 0);
  CHECK(r.protocol == "lost_in_space");
}

TEST_CASE("lost in space counts unseeded craters as missed") {
  // Final orbit contains id 99, absent from orbit 1; the frozen database
  // can never match it.
  NavSequence seq;
  seq.frame_res = 32;
  seq.orbit_starts = {0, 2};
  for (int f = 0; f < 4; ++f) {
    NavFrame fr;
    fr.image = random_image(32, 100 + f);
    fr.boxes.push_back(BoundingBox{4, 4, 14, 14, 1, 0});
    if (f >= 2) fr.boxes.push_back(BoundingBox{18, 16, 12, 12, 99, 0});
    seq.frames.push_back(fr);
  }
  RAReport r = lost_in_space_eval(seq, one_hot_oracle(100), 32, TransformRanges{}, 0.9, 3);
  CHECK(r.missed == 2);  // id 99 appears twice in the final orbit
  CHECK(r.incorrect == 0);
  CHECK(r.correct == 2);  // id 1 in both final-orbit frames

  NavSequence single = seq;
  single.orbit_starts = {0};
  CHECK_THROWS_AS(lost_in_space_eval(single, one_hot_oracle(100), 32, TransformRanges{}, 0.9, 3),
                  InputError);
}

TEST_CASE("lost in space is deterministic per seed") {
  PatchDataset ds = synth_landmarks(10, 32, 4);
  NavSequence seq = synth_navigation(ds, 10, 2, 64, 13);
  RAReport a = lost_in_space_eval(seq, pixel_embedder(), 32, TransformRanges{}, 0.9, 8);
  RAReport b = lost_in_space_eval(seq, pixel_embedder(), 32, TransformRanges{}, 0.9, 8);
  CHECK(ra_report_json(a) == ra_report_json(b));
}

TEST_CASE("the ablation driver sweeps the four transform subsets") {
  std::vector<TransformRanges> seen;
  auto reports = ablation_driver(TransformRanges{},
                                 [&](const TransformRanges& r, const std::string&) {
                                   seen.push_back(r);
                                   RAReport out;
                                   out.protocol = "incremental";
                                   return out;
                                 });
  REQUIRE(reports.size() == 4);
  CHECK(reports[0].transform_subset == "brightness");
  CHECK(reports[1].transform_subset == "rotation");
  CHECK(reports[2].transform_subset == "translation");
  CHECK(reports[3].transform_subset == "all");

  // Rotation-only: no brightness change, no translation.
  CHECK(seen[1].brightness_lo == 1.0);
  CHECK(seen[1].brightness_hi == 1.0);
  CHECK(seen[1].translate_frac == 0.0);
  CHECK(seen[1].rotation_hi > seen[1].rotation_lo);
  // Brightness-only: no rotation.
  CHECK(seen[0].rotation_lo == 0.0);
  CHECK(seen[0].rotation_hi == 0.0);
  CHECK(seen[0].brightness_hi > seen[0].brightness_lo);
  // The unrestricted pass keeps the full family.
  CHECK(seen[3].translate_frac > 0.0);
  CHECK(seen[3].rotation_hi > 0.0);
}

TEST_CASE("identity transforms leave even a weak embedder perfect") {
  PatchDataset ds = synth_landmarks(6, 32, 2);
  std::vector<int> ids = {0, 1, 2, 3, 4, 5};
  RAReport r = incremental_recall(ds, ids, one_hot_oracle(6),
                                  TransformRanges{}.restricted("identity"), 0.9, 5);
  CHECK(r.ra == 100.0);
}

TEST_CASE("reports round-trip through their JSON form") {
  RAReport r;
  r.protocol = "incremental";
  r.seed = 42;
  r.transform_subset = "rotation";
  r.correct = 3;
  r.incorrect = 1;
  r.missed = 1;
  r.ra = 60.0;
  const std::string text = ra_report_json(r);
  for (const char* key :
       {"protocol", "seed", "transform_subset", "correct", "incorrect", "missed", "ra"})
    CHECK(text.find(key) != std::string::npos);

  RAReport back = ra_report_parse(text);
  CHECK(back.protocol == r.protocol);
  CHECK(back.seed == r.seed);
  CHECK(back.transform_subset == r.transform_subset);
  CHECK(back.correct == r.correct);
  CHECK(back.incorrect == r.incorrect);
  CHECK(back.missed == r.missed);
  CHECK(back.ra == r.ra);

  CHECK_THROWS_AS(ra_report_parse("not json"), InputError);
}
