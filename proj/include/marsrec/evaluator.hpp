#pragma once

#include <functional>
#include <string>
#include <vector>

#include "marsrec/data.hpp"
#include "marsrec/image.hpp"
#include "marsrec/transforms.hpp"

namespace marsrec {

using Embedding = std::vector<double>;

// The true instance id rides along so oracle embedders can exist in tests;
// a real model ignores it.
using Embedder = std::function<Embedding(const Image&, int instance_id)>;

// Flat exact-search gallery with cosine matching.
class EmbeddingDB {
 public:
  explicit EmbeddingDB(double match_threshold = 0.9);

  int size() const { return static_cast<int>(ids_.size()); }
  bool contains(int id) const;
  double threshold() const { return threshold_; }

  // Stores the unit-normalized vector; zero-norm input is an error.
  void enroll(const Embedding& z, int id);

  struct Match {
    int id = -1;
    double similarity = 0;
    bool matched = false;
  };
  // Best entry at or above the threshold; ties go to the earliest enrollment.
  Match query(const Embedding& z) const;
  // Best entry regardless of threshold (gallery-size-one recall).
  Match nearest(const Embedding& z) const;

 private:
  double threshold_;
  std::vector<Embedding> entries_;
  std::vector<int> ids_;
};

struct RAReport {
  std::string protocol;
  uint64_t seed = 0;
  std::string transform_subset = "all";
  int correct = 0, incorrect = 0, missed = 0;
  double ra = 0;  // 100 * correct / (correct + incorrect + missed)
};

std::string ra_report_json(const RAReport& r);
RAReport ra_report_parse(const std::string& text);

// Percentage of correct matches among all scored queries; 0 when nothing
// was scored.
inline double recognition_accuracy(int correct, int incorrect, int missed) {
  const int denom = correct + incorrect + missed;
  return denom > 0 ? 100.0 * correct / denom : 0.0;
}

// One enrolled view and one query view per instance, nearest neighbor with
// no threshold; returns the percentage of correct top-1 matches.
double recall_at_1(const PatchDataset& ds, const std::vector<int>& test_ids,
                   const Embedder& embed, const TransformRanges& ranges, uint64_t seed);

// Shuffled stream of each test landmark twice against an initially empty
// database; no-match enrolls, and re-enrollment of a known id counts missed.
RAReport incremental_recall(const PatchDataset& ds, const std::vector<int>& test_ids,
                            const Embedder& embed, const TransformRanges& ranges,
                            double threshold, uint64_t seed);

// Greedy descending-score suppression of boxes overlapping above the IoU
// threshold.
std::vector<BoundingBox> nms(std::vector<BoundingBox> boxes, double iou_threshold = 0.5);

// Sequential frames: ground-truth boxes (area as score) through NMS, crops
// resized to model_res, augmented, embedded, scored incrementally.
RAReport moon_navigation_eval(const NavSequence& seq, const Embedder& embed, int model_res,
                              const TransformRanges& ranges, double threshold, uint64_t seed);

// Database seeded from the first orbit, then frozen; final-orbit frames are
// queried in random order and no-match counts as missed.
RAReport lost_in_space_eval(const NavSequence& seq, const Embedder& embed, int model_res,
                            const TransformRanges& ranges, double threshold, uint64_t seed);

// Reruns a protocol with the transform family restricted to each component
// and once unrestricted; stamps transform_subset on each report.
std::vector<RAReport> ablation_driver(
    const TransformRanges& base,
    const std::function<RAReport(const TransformRanges&, const std::string&)>& run);

}  // namespace marsrec
