#include "marsrec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "marsrec/rng.hpp"

using nlohmann::json;

namespace marsrec {

namespace {

Embedding unit(const Embedding& z, const char* who) {
  double sq = 0;
  for (double v : z) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12)) throw InputError(std::string(who) + ": zero-norm embedding");
  Embedding u(z.size());
  for (size_t i = 0; i < z.size(); ++i) u[i] = z[i] / norm;
  return u;
}

double dot(const Embedding& a, const Embedding& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Counts {
  int correct = 0, incorrect = 0, missed = 0;
};

// One protocol step: match → score, no-match → enroll unless the db is
// frozen. Re-enrollment of a known id is a missed match; a first enrollment
// is unscored.
void score_query(EmbeddingDB& db, const Embedding& z, int true_id, bool frozen, Counts& c) {
  const EmbeddingDB::Match m = db.query(z);
  if (m.matched) {
    if (m.id == true_id)
      ++c.correct;
    else
      ++c.incorrect;
    return;
  }
  if (frozen) {
    ++c.missed;
    return;
  }
  if (db.contains(true_id)) ++c.missed;
  db.enroll(z, true_id);
}

RAReport finish(const std::string& protocol, uint64_t seed, const Counts& c) {
  RAReport r;
  r.protocol = protocol;
  r.seed = seed;
  r.correct = c.correct;
  r.incorrect = c.incorrect;
  r.missed = c.missed;
  r.ra = recognition_accuracy(c.correct, c.incorrect, c.missed);
  return r;
}

// Detection emulation shared by the navigation protocols: ground-truth boxes
// scored by area, suppressed, cropped, resized, augmented, embedded.
std::vector<std::pair<Embedding, int>> frame_crops(const NavSequence& seq, int f,
                                                   const Embedder& embed, int model_res,
                                                   const TransformRanges& ranges, Rng& rng) {
  std::vector<BoundingBox> boxes = seq.frames[f].boxes;
  for (auto& b : boxes) b.score = b.w * b.h;
  const Image frame = seq.frame_image(f);
  std::vector<std::pair<Embedding, int>> out;
  for (const auto& b : nms(std::move(boxes), 0.5)) {
    const Image crop =
        crop_clipped(frame, static_cast<int>(std::lround(b.x)), static_cast<int>(std::lround(b.y)),
                     static_cast<int>(std::lround(b.w)), static_cast<int>(std::lround(b.h)));
    const Image patch = resize_bilinear(crop, model_res, model_res);
    const TransformSpec t = sample_transform(rng, ranges, model_res, model_res);
    out.emplace_back(embed(apply_transform(patch, t), b.crater_id), b.crater_id);
  }
  return out;
}

}  // namespace

EmbeddingDB::EmbeddingDB(double match_threshold) : threshold_(match_threshold) {
  if (!(threshold_ > 0.0 && threshold_ <= 1.0))
    throw ConfigError("EmbeddingDB: match threshold must be in (0, 1]");
}

bool EmbeddingDB::contains(int id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

void EmbeddingDB::enroll(const Embedding& z, int id) {
  entries_.push_back(unit(z, "enroll"));
  ids_.push_back(id);
}

EmbeddingDB::Match EmbeddingDB::query(const Embedding& z) const {
  Match m = nearest(z);
  if (m.matched && m.similarity < threshold_) return Match{};
  return m;
}

EmbeddingDB::Match EmbeddingDB::nearest(const Embedding& z) const {
  const Embedding q = unit(z, "query");
  Match best;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].size() != q.size()) throw InputError("query: dimension mismatch");
    const double s = dot(entries_[i], q);
    if (!best.matched || s > best.similarity) best = Match{ids_[i], s, true};
  }
  return best;
}

std::string ra_report_json(const RAReport& r) {
  json j;
  j["protocol"] = r.protocol;
  j["seed"] = r.seed;
  j["transform_subset"] = r.transform_subset;
  j["correct"] = r.correct;
  j["incorrect"] = r.incorrect;
  j["missed"] = r.missed;
  j["ra"] = r.ra;
  return j.dump(2) + "\n";
}

RAReport ra_report_parse(const std::string& text) {
  try {
    const json j = json::parse(text);
    RAReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.transform_subset = j.at("transform_subset").get<std::string>();
    r.correct = j.at("correct").get<int>();
    r.incorrect = j.at("incorrect").get<int>();
    r.missed = j.at("missed").get<int>();
    r.ra = j.at("ra").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("RAReport: bad JSON: ") + e.what());
  }
}

double recall_at_1(const PatchDataset& ds, const std::vector<int>& test_ids,
                   const Embedder& embed, const TransformRanges& ranges, uint64_t seed) {
  if (test_ids.empty()) throw InputError("recall_at_1: empty test split");
  ranges.validate();
  Rng rng(seed);
  const int res = ds.patch_res;
  EmbeddingDB db(1.0);  // threshold unused, nearest() ignores it
  for (int id : test_ids) {
    const TransformSpec t = sample_transform(rng, ranges, res, res);
    db.enroll(embed(apply_transform(ds.load_instance(id), t), id), id);
  }
  int correct = 0;
  for (int id : test_ids) {
    const TransformSpec t = sample_transform(rng, ranges, res, res);
    const auto m = db.nearest(embed(apply_transform(ds.load_instance(id), t), id));
    if (m.matched && m.id == id) ++correct;
  }
  return 100.0 * correct / static_cast<double>(test_ids.size());
}

RAReport incremental_recall(const PatchDataset& ds, const std::vector<int>& test_ids,
                            const Embedder& embed, const TransformRanges& ranges,
                            double threshold, uint64_t seed) {
  if (test_ids.empty()) throw InputError("incremental_recall: empty test split");
  ranges.validate();
  Rng rng(seed);
  std::vector<int> stream;
  for (int id : test_ids) {
    stream.push_back(id);
    stream.push_back(id);
  }
  rng.shuffle(stream);

  const int res = ds.patch_res;
  EmbeddingDB db(threshold);
  Counts c;
  for (int id : stream) {
    const TransformSpec t = sample_transform(rng, ranges, res, res);
    score_query(db, embed(apply_transform(ds.load_instance(id), t), id), id, false, c);
  }
  return finish("incremental", seed, c);
}

std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_threshold) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const BoundingBox& a, const BoundingBox& b) { return a.score > b.score; });
  std::vector<BoundingBox> kept;
  for (const auto& b : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      const double ix = std::max(0.0, std::min(b.x + b.w, k.x + k.w) - std::max(b.x, k.x));
      const double iy = std::max(0.0, std::min(b.y + b.h, k.y + k.h) - std::max(b.y, k.y));
      const double inter = ix * iy;
      const double iou = inter / (b.w * b.h + k.w * k.h - inter);
      if (iou > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

RAReport moon_navigation_eval(const NavSequence& seq, const Embedder& embed, int model_res,
                              const TransformRanges& ranges, double threshold, uint64_t seed) {
  ranges.validate();
  size_t total_boxes = 0;
  for (const auto& f : seq.frames) total_boxes += f.boxes.size();
  if (seq.frames.empty() || total_boxes == 0)
    throw InputError("moon_navigation_eval: sequence has no annotations");

  Rng rng(seed);
  EmbeddingDB db(threshold);
  Counts c;
  for (size_t f = 0; f < seq.frames.size(); ++f)
    for (const auto& [z, id] : frame_crops(seq, static_cast<int>(f), embed, model_res, ranges, rng))
      score_query(db, z, id, false, c);
  return finish("navigation", seed, c);
}

RAReport lost_in_space_eval(const NavSequence& seq, const Embedder& embed, int model_res,
                            const TransformRanges& ranges, double threshold, uint64_t seed) {
  ranges.validate();
  if (seq.num_orbits() < 2) throw InputError("lost_in_space_eval: need at least 2 orbits");

  Rng rng(seed);
  EmbeddingDB db(threshold);
  // Orbit 1 seeds the gallery; only the first sighting of each id enrolls.
  for (int f = seq.orbit_starts[0]; f < seq.orbit_starts[1]; ++f)
    for (const auto& [z, id] : frame_crops(seq, f, embed, model_res, ranges, rng))
      if (!db.contains(id)) db.enroll(z, id);
  const int seeded = db.size();

  std::vector<int> final_frames;
  for (int f = seq.orbit_starts.back(); f < static_cast<int>(seq.frames.size()); ++f)
    final_frames.push_back(f);
  rng.shuffle(final_frames);

  Counts c;
  for (int f : final_frames)
    for (const auto& [z, id] : frame_crops(seq, f, embed, model_res, ranges, rng))
      score_query(db, z, id, true, c);

  if (db.size() != seeded) throw std::logic_error("lost_in_space_eval: frozen db grew");
  return finish("lost_in_space", seed, c);
}

std::vector<RAReport> ablation_driver(
    const TransformRanges& base,
    const std::function<RAReport(const TransformRanges&, const std::string&)>& run) {
  std::vector<RAReport> out;
  for (const char* subset : {"brightness", "rotation", "translation", "all"}) {
    RAReport r = run(base.restricted(subset), subset);
    r.transform_subset = subset;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace marsrec
