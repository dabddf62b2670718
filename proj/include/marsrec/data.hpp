#pragma once

#include <string>
#include <vector>

#include "marsrec/image.hpp"
#include "marsrec/rng.hpp"

namespace marsrec {

// One stored image: either a file on disk or a pure function of its seed.
struct PatchRecord {
  int id = 0;               // contiguous instance index
  std::string path;         // empty for synthetic records
  uint64_t synth_seed = 0;  // generator salt when synthetic
  int res = 0;
};

struct PatchDataset {
  int patch_res = 0;
  std::vector<std::string> id_names;            // instance index -> original name
  std::vector<std::vector<int>> images_by_id;   // instance index -> record indices
  std::vector<PatchRecord> records;

  int num_instances() const { return static_cast<int>(id_names.size()); }
  Image load(int record_index) const;
  // which-th stored image of an instance (most instances have one).
  Image load_instance(int id, int which = 0) const;
};

struct BoundingBox {
  double x = 0, y = 0, w = 0, h = 0;  // frame pixels, top-left origin
  int crater_id = -1;
  double score = 0;
};

struct NavFrame {
  std::string image_path;  // empty when the frame is held in memory
  Image image;             // populated for synthetic in-memory sequences
  std::vector<BoundingBox> boxes;
};

struct NavSequence {
  int frame_res = 0;
  std::vector<NavFrame> frames;
  std::vector<int> orbit_starts;  // frame index where each orbit begins

  int num_orbits() const { return static_cast<int>(orbit_starts.size()); }
  Image frame_image(int f) const;
};

struct Split {
  std::vector<int> train_ids, test_ids;
};

// Instance-disjoint halves; ids visible in the navigation sequence are
// forced into the test half before the random fill.
Split split_train_test(int num_instances, const std::vector<int>& nav_ids, uint64_t seed);

// Deterministic procedural crater patches; pixel values depend only on
// (seed, id). No files are touched.
PatchDataset synth_landmarks(int n_instances, int patch_res, uint64_t seed);

// Wrap-around ground-track strip observed once per orbit, so later orbits
// re-see the craters of the first one.
NavSequence synth_navigation(const PatchDataset& landmarks, int n_frames, int n_orbits,
                             int frame_res, uint64_t seed);

// Disk layout: <root>/<instance>/<image>.png, 8-bit grayscale.
PatchDataset load_patch_dataset(const std::string& root);
void write_patch_dataset(const PatchDataset& ds, const std::string& root);

// Disk layout: <root>/frames/<k>.png + <k>.txt ("crater_id x y w h" lines)
// plus <root>/manifest.json carrying the orbit boundaries.
NavSequence load_nav_sequence(const std::string& root);
void write_nav_sequence(const NavSequence& seq, const std::string& root);

// Crater ids referenced by the sequence, deduplicated, ascending.
std::vector<int> nav_visible_ids(const NavSequence& seq);

}  // namespace marsrec
