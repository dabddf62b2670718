#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "marsrec/rng.hpp"
#include "marsrec/tensor.hpp"

namespace marsrec {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One augmentation: multiplicative brightness plus a rigid warp. The warp
// convention is fixed project-wide: content is translated by (tx, ty) pixels
// first, then rotated counter-clockwise by rotation_deg about the patch
// center. Translations are expressed at ref_h x ref_w and rescale linearly
// with resolution.
struct TransformSpec {
  double brightness_factor = 1.0;
  double rotation_deg = 0.0;
  double translate_x = 0.0;  // columns, pixels at ref resolution
  double translate_y = 0.0;  // rows
  int ref_h = 0;
  int ref_w = 0;

  bool geometric_identity() const {
    return rotation_deg == 0.0 && translate_x == 0.0 && translate_y == 0.0;
  }
  bool identity() const { return brightness_factor == 1.0 && geometric_identity(); }
};

// Sampling ranges for the augmentation family. Rotation covers the full
// circle by default: overhead terrain views carry no canonical "up".
struct TransformRanges {
  double brightness_lo = 0.6;
  double brightness_hi = 1.4;
  double rotation_lo = 0.0;
  double rotation_hi = 360.0;
  double translate_frac = 0.10;  // of patch side, per axis

  void validate() const {
    if (!(brightness_lo > 0.0) || !(brightness_lo <= brightness_hi))
      throw ConfigError("transform ranges: need 0 < brightness_lo <= brightness_hi");
    if (!(rotation_lo >= 0.0) || !(rotation_lo <= rotation_hi) || !(rotation_hi <= 360.0))
      throw ConfigError("transform ranges: rotation bounds must satisfy 0 <= lo <= hi <= 360");
    if (!(translate_frac >= 0.0) || !(translate_frac <= 0.25))
      throw ConfigError("transform ranges: translate_frac must be in [0, 0.25]");
  }

  static TransformRanges identity_only() {
    TransformRanges r;
    r.brightness_lo = r.brightness_hi = 1.0;
    r.rotation_lo = r.rotation_hi = 0.0;
    r.translate_frac = 0.0;
    return r;
  }

  // Restrict the family to a single component, for the ablation driver.
  // subset: "all" | "brightness" | "rotation" | "translation" | "identity".
  TransformRanges restricted(const std::string& subset) const {
    TransformRanges r = *this;
    if (subset == "all") return r;
    if (subset == "brightness") {
      r.rotation_lo = r.rotation_hi = 0.0;
      r.translate_frac = 0.0;
    } else if (subset == "rotation") {
      r.brightness_lo = r.brightness_hi = 1.0;
      r.translate_frac = 0.0;
    } else if (subset == "translation") {
      r.brightness_lo = r.brightness_hi = 1.0;
      r.rotation_lo = r.rotation_hi = 0.0;
    } else if (subset == "identity") {
      return identity_only();
    } else {
      throw ConfigError("unknown transform subset '" + subset +
                        "' (expected all|brightness|rotation|translation|identity)");
    }
    return r;
  }
};

// Boolean grid marking pixels that survive forward-then-inverse warping
// without ever sampling outside the original support.
struct ValidMask {
  int h = 0, w = 0;
  std::vector<uint8_t> mask;
  bool at(int r, int c) const { return mask[static_cast<size_t>(r) * w + c] != 0; }
  int64_t count_true() const {
    int64_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
  }
};

namespace detail {

// Inverse-mapping coefficients for apply_transform(x, t):
//   src(p) = R_{-theta}(p - c) + c - d
// in (row, col) coordinates about the patch center c.
struct GeomMap {
  double cos_t, sin_t, cy, cx, dy, dx;

  GeomMap(const TransformSpec& t, int h, int w) {
    const double rad = t.rotation_deg * M_PI / 180.0;
    cos_t = std::cos(rad);
    sin_t = std::sin(rad);
    cy = (h - 1) * 0.5;
    cx = (w - 1) * 0.5;
    dy = t.translate_y;
    dx = t.translate_x;
  }

  void src(double pr, double pc, double& sr, double& sc) const {
    const double r = pr - cy, c = pc - cx;
    sr = r * cos_t + c * sin_t + cy - dy;
    sc = -r * sin_t + c * cos_t + cx - dx;
  }
};

// True when every nonzero-weight bilinear tap of a read at (u, v) lies
// inside an h x w grid.
inline bool bilinear_in_support(double u, double v, int h, int w) {
  if (!(u >= 0.0) || !(v >= 0.0) || !(u <= h - 1) || !(v <= w - 1)) return false;
  return true;
}

template <class T>
inline T bilinear_read(const T* img, int h, int w, double u, double v) {
  const int r0 = static_cast<int>(std::floor(u));
  const int c0 = static_cast<int>(std::floor(v));
  const double fr = u - r0, fc = v - c0;
  T acc = T(0);
  const double w00 = (1 - fr) * (1 - fc), w01 = (1 - fr) * fc, w10 = fr * (1 - fc), w11 = fr * fc;
  auto tap = [&](int r, int c, double wt) {
    if (wt > 0.0 && r >= 0 && r < h && c >= 0 && c < w)
      acc += static_cast<T>(wt) * img[static_cast<size_t>(r) * w + c];
  };
  tap(r0, c0, w00);
  tap(r0, c0 + 1, w01);
  tap(r0 + 1, c0, w10);
  tap(r0 + 1, c0 + 1, w11);
  return acc;
}

}  // namespace detail

inline TransformSpec sample_transform(Rng& rng, const TransformRanges& ranges, int h, int w) {
  ranges.validate();
  TransformSpec t;
  t.brightness_factor = rng.uniform(ranges.brightness_lo, ranges.brightness_hi);
  t.rotation_deg = rng.uniform(ranges.rotation_lo, ranges.rotation_hi);
  if (t.rotation_deg >= 360.0) t.rotation_deg = 0.0;
  const double mx = ranges.translate_frac * w;
  const double my = ranges.translate_frac * h;
  t.translate_x = rng.uniform(-mx, mx);
  t.translate_y = rng.uniform(-my, my);
  t.ref_h = h;
  t.ref_w = w;
  return t;
}

inline TransformSpec sample_transform(uint64_t seed, const TransformRanges& ranges, int h, int w) {
  Rng rng(seed);
  return sample_transform(rng, ranges, h, w);
}

// Geometric inverse; brightness is deliberately reset to 1 (photometric
// changes are never undone on attention maps).
inline TransformSpec invert_geometric(const TransformSpec& t) {
  TransformSpec inv;
  inv.brightness_factor = 1.0;
  inv.rotation_deg = t.rotation_deg == 0.0 ? 0.0 : 360.0 - t.rotation_deg;
  const double rad = t.rotation_deg * M_PI / 180.0;
  const double ct = std::cos(rad), st = std::sin(rad);
  // d' = -R_theta d, so that translate-then-rotate composed with its
  // inverse cancels exactly.
  inv.translate_y = -(t.translate_y * ct - t.translate_x * st);
  inv.translate_x = -(t.translate_y * st + t.translate_x * ct);
  inv.ref_h = t.ref_h;
  inv.ref_w = t.ref_w;
  return inv;
}

inline TransformSpec rescale_to_resolution(const TransformSpec& t, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw InputError("rescale_to_resolution: target dims must be >= 1");
  if (t.ref_h < 1 || t.ref_w < 1) throw InputError("rescale_to_resolution: spec has no reference resolution");
  TransformSpec out = t;
  out.translate_x = t.translate_x * (static_cast<double>(target_w) / t.ref_w);
  out.translate_y = t.translate_y * (static_cast<double>(target_h) / t.ref_h);
  out.ref_h = target_h;
  out.ref_w = target_w;
  return out;
}

// Warp spec used to undo a view's pose at attention-map resolution.
inline TransformSpec pose_normalizer(const TransformSpec& t, int map_h, int map_w) {
  return rescale_to_resolution(invert_geometric(t), map_h, map_w);
}

// Brightness (multiply + clip to [0,1]) followed by the rigid warp with
// zero fill outside the source support. Accepts [H,W] or [C,H,W].
template <class T>
Tensor<T> apply_transform(const Tensor<T>& image, const TransformSpec& t) {
  if (image.size() == 0) throw InputError("apply_transform: empty image");
  const int rank = image.rank();
  if (rank != 2 && rank != 3) throw InputError("apply_transform: expected [H,W] or [C,H,W]");
  const int ch = rank == 3 ? image.dim(0) : 1;
  const int h = image.dim(rank - 2), w = image.dim(rank - 1);

  Tensor<T> bright = image;
  if (t.brightness_factor != 1.0) {
    for (int64_t i = 0; i < bright.size(); ++i) {
      double v = t.brightness_factor * static_cast<double>(bright[i]);
      bright[i] = static_cast<T>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
    }
  }
  if (t.geometric_identity()) return bright;

  const detail::GeomMap map(t, h, w);
  Tensor<T> out(image.shape());
  for (int k = 0; k < ch; ++k) {
    const T* src = bright.data() + static_cast<int64_t>(k) * h * w;
    T* dst = out.data() + static_cast<int64_t>(k) * h * w;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double sr, sc;
        map.src(r, c, sr, sc);
        dst[static_cast<size_t>(r) * w + c] = detail::bilinear_read(src, h, w, sr, sc);
      }
  }
  return out;
}

// Pixels whose forward-then-inverse sampling chain stays inside the
// original support. The inverse read must land in-bounds, and so must the
// forward reads that produced the pixels it interpolates between.
inline ValidMask valid_mask(const TransformSpec& t, int h, int w) {
  ValidMask vm;
  vm.h = h;
  vm.w = w;
  vm.mask.assign(static_cast<size_t>(h) * w, 0);
  const detail::GeomMap fwd(t, h, w);
  const detail::GeomMap inv(invert_geometric(t), h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double qr, qc;
      inv.src(r, c, qr, qc);
      if (!detail::bilinear_in_support(qr, qc, h, w)) continue;
      const int r0 = static_cast<int>(std::floor(qr));
      const int c0 = static_cast<int>(std::floor(qc));
      const double fr = qr - r0, fc = qc - c0;
      const double wt[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
      const int nr[4] = {r0, r0, r0 + 1, r0 + 1};
      const int nc[4] = {c0, c0 + 1, c0, c0 + 1};
      bool ok = true;
      for (int i = 0; i < 4 && ok; ++i) {
        if (wt[i] <= 0.0) continue;
        double sr, sc;
        fwd.src(nr[i], nc[i], sr, sc);
        ok = detail::bilinear_in_support(sr, sc, h, w);
      }
      if (ok) vm.mask[static_cast<size_t>(r) * w + c] = 1;
    }
  return vm;
}

}  // namespace marsrec
