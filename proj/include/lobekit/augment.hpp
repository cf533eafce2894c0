#pragma once

// Joint geometric augmentation of an intensity volume and its label mask.

#include <cmath>
#include <numbers>
#include <utility>

#include "lobekit/random.hpp"
#include "lobekit/volume.hpp"

namespace lobekit {

struct AugmentConfig {
  int shift_max = 8;          // voxels, per axis
  double flip_z_prob = 0.5;
  double rotate_max_deg = 10.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (shift_max < 0) fail(ErrorKind::InvalidConfig, "shift_max must be >= 0");
    if (!(flip_z_prob >= 0.0 && flip_z_prob <= 1.0)) fail(ErrorKind::InvalidConfig, "flip_z_prob must be in [0,1]");
    if (!(rotate_max_deg >= 0.0)) fail(ErrorKind::InvalidConfig, "rotate_max_deg must be >= 0");
  }
  static AugmentConfig none() { return {0, 0.0, 0.0, 0}; }
};

struct Sample {
  Volume volume;
  LabelMask labels;
};

/// Integer translation by (dz, dy, dx): out(p) = in(p - shift). Vacated
/// voxels get intensity 0 and background.
inline Sample shift(const Volume& v, const LabelMask& m, std::array<int, 3> s) {
  if (!(v.dims() == m.dims())) fail(ErrorKind::ShapeMismatch, "volume and mask dims differ");
  const Dims d = v.dims();
  Sample out{Volume(d, 0.0f, v.spacing(), v.origin()), LabelMask(d, 0, m.spacing(), m.origin())};
  for (int z = 0; z < d.z; ++z) {
    const int sz = z - s[0];
    if (sz < 0 || sz >= d.z) continue;
    for (int y = 0; y < d.y; ++y) {
      const int sy = y - s[1];
      if (sy < 0 || sy >= d.y) continue;
      for (int x = 0; x < d.x; ++x) {
        const int sx = x - s[2];
        if (sx < 0 || sx >= d.x) continue;
        out.volume(z, y, x) = v(sz, sy, sx);
        out.labels(z, y, x) = m(sz, sy, sx);
      }
    }
  }
  return out;
}

inline Sample random_shift(const Volume& v, const LabelMask& m, const AugmentConfig& cfg, Rng& rng) {
  std::array<int, 3> s{};
  for (auto& c : s) c = rng.integer(-cfg.shift_max, cfg.shift_max);
  return shift(v, m, s);
}

/// Reverses slice order; labels travel with their voxels unchanged.
inline Sample flip_z(const Volume& v, const LabelMask& m) {
  if (!(v.dims() == m.dims())) fail(ErrorKind::ShapeMismatch, "volume and mask dims differ");
  const Dims d = v.dims();
  Sample out{Volume(d, 0.0f, v.spacing(), v.origin()), LabelMask(d, 0, m.spacing(), m.origin())};
  for (int z = 0; z < d.z; ++z) {
    std::copy(v.slice(d.z - 1 - z), v.slice(d.z - 1 - z) + d.slice_size(), out.volume.slice(z));
    std::copy(m.slice(d.z - 1 - z), m.slice(d.z - 1 - z) + d.slice_size(), out.labels.slice(z));
  }
  return out;
}

/// In-plane rotation about each slice centre by `angle_deg` (counter-clockwise
/// in (x, y)). Intensities are bilinear, labels nearest-neighbour;
/// samples falling outside the slice read as 0 / background.
inline Sample rotate_xy(const Volume& v, const LabelMask& m, double angle_deg) {
  if (!(v.dims() == m.dims())) fail(ErrorKind::ShapeMismatch, "volume and mask dims differ");
  const Dims d = v.dims();
  Sample out{Volume(d, 0.0f, v.spacing(), v.origin()), LabelMask(d, 0, m.spacing(), m.origin())};
  double cs, sn;
  const double quarter = angle_deg / 90.0;
  if (quarter == std::round(quarter)) {
    // Exact multiples of 90 degrees permute indices without rounding error.
    const int q = ((static_cast<int>(std::round(quarter)) % 4) + 4) % 4;
    constexpr int kCos[4] = {1, 0, -1, 0};
    constexpr int kSin[4] = {0, 1, 0, -1};
    cs = kCos[q];
    sn = kSin[q];
  } else {
    const double a = angle_deg * std::numbers::pi / 180.0;
    cs = std::cos(a);
    sn = std::sin(a);
  }
  const double cy = 0.5 * (d.y - 1), cx = 0.5 * (d.x - 1);
  for (int y = 0; y < d.y; ++y)
    for (int x = 0; x < d.x; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double src_x = cx + cs * dx + sn * dy;
      const double src_y = cy - sn * dx + cs * dy;

      const int nx = static_cast<int>(std::lround(src_x)), ny = static_cast<int>(std::lround(src_y));
      const bool near_in = nx >= 0 && nx < d.x && ny >= 0 && ny < d.y;

      const int x0 = static_cast<int>(std::floor(src_x)), y0 = static_cast<int>(std::floor(src_y));
      const double fx = src_x - x0, fy = src_y - y0;
      for (int z = 0; z < d.z; ++z) {
        if (near_in) out.labels(z, y, x) = m(z, ny, nx);
        double acc = 0.0;
        for (int j = 0; j < 2; ++j)
          for (int i = 0; i < 2; ++i) {
            const int sx = x0 + i, sy = y0 + j;
            const double w = (i ? fx : 1.0 - fx) * (j ? fy : 1.0 - fy);
            if (w != 0.0 && sx >= 0 && sx < d.x && sy >= 0 && sy < d.y) acc += w * v(z, sy, sx);
          }
        out.volume(z, y, x) = static_cast<float>(acc);
      }
    }
  return out;
}

inline Sample rotate_xy(const Volume& v, const LabelMask& m, const AugmentConfig& cfg, Rng& rng) {
  return rotate_xy(v, m, rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg));
}

/// Shift, then optional z-flip, then rotation; draws from `rng` in that order.
inline Sample augment(const Volume& v, const LabelMask& m, const AugmentConfig& cfg, Rng& rng) {
  Sample s = cfg.shift_max > 0 ? random_shift(v, m, cfg, rng) : Sample{v, m};
  if (cfg.flip_z_prob > 0.0 && rng.uniform() < cfg.flip_z_prob) s = flip_z(s.volume, s.labels);
  if (cfg.rotate_max_deg > 0.0) s = rotate_xy(s.volume, s.labels, cfg, rng);
  return s;
}

}  // namespace lobekit
