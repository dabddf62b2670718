#include "marsrec/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "marsrec/png_io.hpp"
#include "marsrec/transforms.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace marsrec {

namespace {

// Splitmix-style coordinate hash to [-1,1]; bit-stable across platforms.
double hash_noise(uint64_t salt, int64_t a, int64_t b) {
  uint64_t x = salt ^ (static_cast<uint64_t>(a) * 0x9E3779B97F4A7C15ull) ^
               (static_cast<uint64_t>(b) * 0xBF58476D1CE4E5B9ull);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return static_cast<double>(x >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

struct CraterModel {
  double depth, bowl_k, rim_h, rim_w;
  double ecc, ecc_cos, ecc_sin;  // mild ellipticity
  double detail_amp;
  uint64_t detail_salt;
};

CraterModel make_crater_model(Rng rng) {
  CraterModel m;
  m.depth = rng.uniform(0.55, 1.0);
  m.bowl_k = rng.uniform(2.0, 4.5);
  m.rim_h = rng.uniform(0.12, 0.3);
  m.rim_w = rng.uniform(0.1, 0.2);
  m.ecc = rng.uniform(0.0, 0.25);
  const double ang = rng.uniform(0.0, 2 * M_PI);
  m.ecc_cos = std::cos(ang);
  m.ecc_sin = std::sin(ang);
  m.detail_amp = rng.uniform(0.02, 0.05);
  m.detail_salt = rng.next_u64();
  return m;
}

// Height contribution of one crater at offset (dr, dc) from its center.
double crater_height(const CraterModel& m, double dr, double dc, double radius) {
  const double ar = dr * m.ecc_cos + dc * m.ecc_sin;
  const double ac = -dr * m.ecc_sin + dc * m.ecc_cos;
  const double d = std::sqrt(ar * ar * (1 + m.ecc) + ac * ac) / radius;
  if (d > 2.5) return 0.0;
  const double bowl = -m.depth * std::exp(-d * d * m.bowl_k);
  const double t = (d - 1.0) / m.rim_w;
  const double rim = m.rim_h * std::exp(-t * t);
  return bowl + rim;
}

// Fixed illumination from the upper left, shared by every instance.
constexpr double kLightR = -0.62, kLightC = -0.62;

void shade(const Tensor<double>& height, double scale, Image& out) {
  const int h = height.dim(0), w = height.dim(1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int rp = std::min(r + 1, h - 1), rm = std::max(r - 1, 0);
      const int cp = std::min(c + 1, w - 1), cm = std::max(c - 1, 0);
      const double gr = (height.at(rp, c) - height.at(rm, c)) / (rp - rm);
      const double gc = (height.at(r, cp) - height.at(r, cm)) / (cp - cm);
      const double v = 0.55 + scale * (gr * kLightR + gc * kLightC);
      out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

struct TerrainModel {
  double a1, a2, f1, f2, f3, ph1, ph2, ph3;
};

TerrainModel make_terrain_model(Rng& rng, double amp) {
  TerrainModel t;
  t.a1 = rng.uniform(0.5, 1.0) * amp;
  t.a2 = rng.uniform(0.3, 0.8) * amp;
  t.f1 = rng.uniform(1.0, 2.5);
  t.f2 = rng.uniform(1.0, 2.5);
  t.f3 = rng.uniform(2.0, 4.0);
  t.ph1 = rng.uniform(0.0, 2 * M_PI);
  t.ph2 = rng.uniform(0.0, 2 * M_PI);
  t.ph3 = rng.uniform(0.0, 2 * M_PI);
  return t;
}

double terrain_height(const TerrainModel& t, double u, double v) {
  return t.a1 * std::sin(2 * M_PI * t.f1 * u + t.ph1) * std::cos(2 * M_PI * t.f2 * v + t.ph2) +
         t.a2 * std::sin(2 * M_PI * t.f3 * (u + v) + t.ph3);
}

Image synth_patch(uint64_t dataset_seed, int id, int res) {
  Rng rng = Rng(dataset_seed).fork(0x70617463ull + static_cast<uint64_t>(id));
  const CraterModel crater = make_crater_model(rng.fork(1));
  Rng trng = rng.fork(2);
  const TerrainModel terrain = make_terrain_model(trng, 1.2);
  const double radius = res * rng.uniform(0.18, 0.3);
  const double cy = res * (0.5 + rng.uniform(-0.08, 0.08));
  const double cx = res * (0.5 + rng.uniform(-0.08, 0.08));

  Tensor<double> height({res, res});
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c)
      height.at(r, c) =
          radius * (0.012 * terrain_height(terrain, double(r) / res, double(c) / res) +
                    0.1 * crater_height(crater, r - cy, c - cx, radius));

  Image img({res, res});
  shade(height, 2.2, img);
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) {
      const double n = crater.detail_amp * hash_noise(crater.detail_salt, r, c);
      img.at(r, c) = static_cast<float>(std::clamp(double(img.at(r, c)) + n, 0.0, 1.0));
    }
  return img;
}

bool numeric_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

}  // namespace

Image PatchDataset::load(int record_index) const {
  const auto& rec = records.at(record_index);
  if (!rec.path.empty()) return read_png_gray(rec.path);
  return synth_patch(rec.synth_seed, rec.id, rec.res);
}

Image PatchDataset::load_instance(int id, int which) const {
  const auto& idxs = images_by_id.at(id);
  return load(idxs.at(which % idxs.size()));
}

Split split_train_test(int num_instances, const std::vector<int>& nav_ids, uint64_t seed) {
  if (num_instances < 2) throw InputError("split_train_test: need at least 2 instances");
  std::vector<char> in_test(num_instances, 0);
  Split split;
  for (int id : nav_ids) {
    if (id < 0 || id >= num_instances) throw InputError("split_train_test: nav id out of range");
    if (!in_test[id]) {
      in_test[id] = 1;
      split.test_ids.push_back(id);
    }
  }
  const int target = num_instances / 2;
  if (static_cast<int>(split.test_ids.size()) > target)
    std::fprintf(stderr, "warning: navigation covers %zu ids, test split exceeds half (%d)\n",
                 split.test_ids.size(), target);

  std::vector<int> rest;
  for (int i = 0; i < num_instances; ++i)
    if (!in_test[i]) rest.push_back(i);
  Rng rng(seed);
  rng.shuffle(rest);
  for (int id : rest) {
    if (static_cast<int>(split.test_ids.size()) < target) {
      split.test_ids.push_back(id);
      in_test[id] = 1;
    } else {
      split.train_ids.push_back(id);
    }
  }
  std::sort(split.test_ids.begin(), split.test_ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  return split;
}

PatchDataset synth_landmarks(int n_instances, int patch_res, uint64_t seed) {
  if (n_instances < 1 || patch_res < 8) throw InputError("synth_landmarks: bad size");
  PatchDataset ds;
  ds.patch_res = patch_res;
  for (int i = 0; i < n_instances; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "%04d", i);
    ds.id_names.push_back(name);
    ds.images_by_id.push_back({static_cast<int>(ds.records.size())});
    ds.records.push_back(PatchRecord{i, "", seed, patch_res});
  }
  return ds;
}

NavSequence synth_navigation(const PatchDataset& landmarks, int n_frames, int n_orbits,
                             int frame_res, uint64_t seed) {
  if (n_orbits < 1) throw InputError("synth_navigation: need at least one orbit");
  if (n_frames < 2 * n_orbits || n_frames % n_orbits != 0)
    throw InputError("synth_navigation: frames must be a multiple of orbits, >= 2 per orbit");
  const int slots = n_frames / n_orbits;
  if (landmarks.num_instances() < slots)
    throw InputError("synth_navigation: dataset has fewer instances than frame slots");

  const int stride = frame_res / 2;
  const int64_t L = static_cast<int64_t>(slots) * stride;

  Rng rng(seed);
  std::vector<int> ids(landmarks.num_instances());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  rng.shuffle(ids);
  ids.resize(slots);

  struct Crater {
    int id;
    double u, v, size;
    CraterModel model;
  };
  const uint64_t patch_seed = landmarks.records.empty() ? seed : landmarks.records[0].synth_seed;
  std::vector<Crater> craters;
  for (int k = 0; k < slots; ++k) {
    Crater cr;
    cr.id = ids[k];
    cr.u = k * stride + stride * 0.5 + rng.uniform(-stride * 0.125, stride * 0.125);
    cr.size = frame_res * rng.uniform(0.2, 0.34);
    cr.v = rng.uniform(cr.size * 0.5 + 2.0, frame_res - cr.size * 0.5 - 2.0);
    // Same per-id appearance as the patch generator, so the landmark and its
    // navigation sightings look alike.
    cr.model = make_crater_model(
        Rng(patch_seed).fork(0x70617463ull + static_cast<uint64_t>(cr.id)).fork(1));
    craters.push_back(cr);
  }

  Rng trng = rng.fork(3);
  const TerrainModel terrain = make_terrain_model(trng, 1.0);
  const uint64_t bg_salt = rng.next_u64();

  NavSequence seq;
  seq.frame_res = frame_res;
  for (int o = 0; o < n_orbits; ++o) seq.orbit_starts.push_back(o * slots);

  for (int f = 0; f < n_frames; ++f) {
    const int j = f % slots;
    const int64_t start = static_cast<int64_t>(j) * stride;

    Tensor<double> height({frame_res, frame_res});
    for (int r = 0; r < frame_res; ++r)
      for (int c = 0; c < frame_res; ++c) {
        const double u_abs = static_cast<double>((start + c) % L);
        double h = frame_res * 0.012 * terrain_height(terrain, u_abs / L, double(r) / frame_res);
        for (const auto& cr : craters) {
          double dc = std::fmod(cr.u - start + L, double(L));
          if (dc > L / 2.0) dc -= L;  // nearest wrapped offset
          dc -= c;
          const double dr = cr.v - r;
          const double radius = cr.size * 0.35;
          if (std::abs(dc) < 3 * radius && std::abs(dr) < 3 * radius)
            h += radius * 0.1 * crater_height(cr.model, -dr, -dc, radius);
        }
        height.at(r, c) = h;
      }

    NavFrame frame;
    frame.image = Image({frame_res, frame_res});
    shade(height, 2.2, frame.image);
    for (int r = 0; r < frame_res; ++r)
      for (int c = 0; c < frame_res; ++c) {
        const int64_t u_abs = (start + c) % L;
        double v = frame.image.at(r, c) + 0.02 * hash_noise(bg_salt, r, u_abs);
        for (const auto& cr : craters) {
          double dc = std::fmod(cr.u - start + L, double(L));
          if (dc > L / 2.0) dc -= L;
          const double lr = r - cr.v, lc = c - dc;
          if (std::abs(lr) < cr.size && std::abs(lc) < cr.size)
            v += cr.model.detail_amp *
                 hash_noise(cr.model.detail_salt, std::llround(lr * 4), std::llround(lc * 4));
        }
        frame.image.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }

    for (const auto& cr : craters) {
      double dc = std::fmod(cr.u - start + L, double(L));
      if (dc > L / 2.0) dc -= L;
      const double x = dc - cr.size * 0.5, y = cr.v - cr.size * 0.5;
      if (x >= 0 && y >= 0 && x + cr.size <= frame_res && y + cr.size <= frame_res &&
          static_cast<int>(frame.boxes.size()) < 6)
        frame.boxes.push_back(BoundingBox{x, y, cr.size, cr.size, cr.id, 0.0});
    }
    if (frame.boxes.empty())
      throw std::logic_error("synth_navigation: frame without a visible crater");
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

Image NavSequence::frame_image(int f) const {
  const auto& fr = frames.at(f);
  if (fr.image.size() > 0) return fr.image;
  return read_png_gray(fr.image_path);
}

std::vector<int> nav_visible_ids(const NavSequence& seq) {
  std::vector<int> ids;
  for (const auto& f : seq.frames)
    for (const auto& b : f.boxes) ids.push_back(b.crater_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

PatchDataset load_patch_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw InputError("load_patch_dataset: not a directory: " + root);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  if (names.empty()) throw InputError("load_patch_dataset: no instance directories in " + root);
  std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
    if (numeric_name(a) && numeric_name(b)) {
      if (a.size() != b.size()) return a.size() < b.size();
    }
    return a < b;
  });

  PatchDataset ds;
  for (const auto& name : names) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / name)) {
      if (!e.is_regular_file()) continue;
      if (e.path().extension() == ".png") {
        files.push_back(e.path().string());
      } else {
        std::fprintf(stderr, "warning: skipping non-image file %s\n", e.path().string().c_str());
      }
    }
    if (files.empty())
      throw InputError("load_patch_dataset: instance '" + name + "' has no images");
    std::sort(files.begin(), files.end());
    const int id = static_cast<int>(ds.id_names.size());
    ds.id_names.push_back(name);
    ds.images_by_id.emplace_back();
    for (const auto& f : files) {
      ds.images_by_id.back().push_back(static_cast<int>(ds.records.size()));
      ds.records.push_back(PatchRecord{id, f, 0, 0});
    }
  }
  Image first = ds.load(0);
  ds.patch_res = first.dim(0);
  return ds;
}

void write_patch_dataset(const PatchDataset& ds, const std::string& root) {
  fs::create_directories(root);
  for (int id = 0; id < ds.num_instances(); ++id) {
    const fs::path dir = fs::path(root) / ds.id_names[id];
    fs::create_directories(dir);
    const auto& idxs = ds.images_by_id[id];
    for (size_t k = 0; k < idxs.size(); ++k)
      write_png_gray((dir / (std::to_string(k) + ".png")).string(), ds.load(idxs[k]));
  }
}

NavSequence load_nav_sequence(const std::string& root) {
  const fs::path manifest_path = fs::path(root) / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw InputError("load_nav_sequence: missing " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw InputError("load_nav_sequence: bad manifest: " + std::string(e.what()));
  }
  NavSequence seq;
  seq.frame_res = manifest.at("frame_res").get<int>();
  seq.orbit_starts = manifest.at("orbit_starts").get<std::vector<int>>();
  const int n = manifest.at("frame_count").get<int>();
  if (n < 1 || seq.orbit_starts.empty() || seq.orbit_starts[0] != 0)
    throw InputError("load_nav_sequence: manifest inconsistent");

  for (int f = 0; f < n; ++f) {
    NavFrame frame;
    const fs::path png = fs::path(root) / "frames" / (std::to_string(f) + ".png");
    const fs::path txt = fs::path(root) / "frames" / (std::to_string(f) + ".txt");
    if (!fs::exists(png)) throw InputError("load_nav_sequence: missing frame " + png.string());
    frame.image_path = png.string();
    std::ifstream tf(txt);
    if (!tf) throw InputError("load_nav_sequence: missing annotations " + txt.string());
    std::string line;
    int lineno = 0;
    while (std::getline(tf, line)) {
      ++lineno;
      if (line.empty()) continue;
      BoundingBox b;
      char extra;
      const int got = std::sscanf(line.c_str(), "%d %lf %lf %lf %lf %c", &b.crater_id, &b.x, &b.y,
                                  &b.w, &b.h, &extra);
      if (got != 5)
        throw InputError("load_nav_sequence: " + txt.string() + ":" + std::to_string(lineno) +
                         ": expected 'crater_id x y w h'");
      const double x0 = std::max(0.0, b.x), y0 = std::max(0.0, b.y);
      const double x1 = std::min(static_cast<double>(seq.frame_res), b.x + b.w);
      const double y1 = std::min(static_cast<double>(seq.frame_res), b.y + b.h);
      if (x1 - x0 < 1.0 || y1 - y0 < 1.0)
        throw InputError("load_nav_sequence: " + txt.string() + ":" + std::to_string(lineno) +
                         ": box outside frame");
      if (x0 != b.x || y0 != b.y || x1 != b.x + b.w || y1 != b.y + b.h)
        std::fprintf(stderr, "warning: clipped box at %s:%d\n", txt.string().c_str(), lineno);
      b.x = x0;
      b.y = y0;
      b.w = x1 - x0;
      b.h = y1 - y0;
      frame.boxes.push_back(b);
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

void write_nav_sequence(const NavSequence& seq, const std::string& root) {
  const fs::path frames_dir = fs::path(root) / "frames";
  fs::create_directories(frames_dir);
  json manifest;
  manifest["frame_res"] = seq.frame_res;
  manifest["frame_count"] = static_cast<int>(seq.frames.size());
  manifest["orbit_starts"] = seq.orbit_starts;
  std::ofstream(fs::path(root) / "manifest.json") << manifest.dump(2) << "\n";

  for (size_t f = 0; f < seq.frames.size(); ++f) {
    const auto& frame = seq.frames[f];
    if (frame.image.size() == 0)
      throw InputError("write_nav_sequence: frame has no in-memory image");
    write_png_gray((frames_dir / (std::to_string(f) + ".png")).string(), frame.image);
    std::ofstream tf(frames_dir / (std::to_string(f) + ".txt"));
    for (const auto& b : frame.boxes)
      tf << b.crater_id << " " << b.x << " " << b.y << " " << b.w << " " << b.h << "\n";
  }
}

}  // namespace marsrec
