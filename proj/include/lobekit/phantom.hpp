#pragma once

// Synthetic five-lobe chest phantoms with known ground truth.
//
// Geometry, all relative to the grid so other sizes scale:
//   body: elliptic cylinder along z, soft tissue;
//   lungs: two ellipsoids; the right lung sits at small x (image left);
//   right lung: oblique plane separates RL, a horizontal plane splits the
//   remainder into RU (above) and RM; left lung: oblique plane, LU / LL.
// Fissures are drawn as thin brighter sheets on the planes. The label
// boundary undulates around the drawn sheet with an amplitude proportional
// to `incompleteness`, so labels stay a partition of the lung.

#include <cmath>
#include <numbers>

#include "lobekit/random.hpp"
#include "lobekit/volume.hpp"

namespace lobekit {

struct PhantomConfig {
  Dims dims{32, 64, 64};
  std::uint64_t seed = 0;

  // Fractions of the grid extent.
  double body_radius_y = 27.0 / 64.0;
  double body_radius_x = 30.0 / 64.0;
  double lung_offset_x = 13.0 / 64.0;   // lung centres sit at 0.5 -/+ this
  double center_jitter = 1.5 / 32.0;    // of each axis
  std::array<double, 2> lung_radius_z{12.0 / 32.0, 13.5 / 32.0};
  std::array<double, 2> lung_radius_y{16.0 / 64.0, 19.0 / 64.0};
  std::array<double, 2> lung_radius_x{9.0 / 64.0, 10.5 / 64.0};

  double oblique_deg = 45.0;
  double fissure_jitter_deg = 8.0;
  double horizontal_offset_lo = 2.0 / 32.0;  // above the lung centre, fraction of Z
  double horizontal_offset_hi = 4.0 / 32.0;
  double incompleteness = 0.2;
  double fissure_half_width = 0.6;  // voxels

  double noise_sigma = 20.0;
  double air_hu = -1000.0;
  double body_hu = 40.0;
  double lung_hu = -850.0;
  double fissure_hu = -600.0;

  void validate() const {
    if (!dims.valid() || dims.z % 2 || dims.y % 2 || dims.x % 2)
      fail(ErrorKind::InvalidConfig, "phantom dims must be positive and even");
    if (!(incompleteness >= 0.0 && incompleteness <= 1.0)) fail(ErrorKind::InvalidConfig, "incompleteness must be in [0,1]");
    if (!(noise_sigma >= 0.0)) fail(ErrorKind::InvalidConfig, "noise_sigma must be >= 0");
    if (lung_radius_z[0] > lung_radius_z[1] || lung_radius_y[0] > lung_radius_y[1] || lung_radius_x[0] > lung_radius_x[1])
      fail(ErrorKind::InvalidConfig, "lung radius ranges must be ordered");
  }
};

struct Phantom {
  Volume hu;
  LabelMask labels;
  BinaryMask fissures;  // voxels painted with fissure intensity
};

inline Phantom generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const Dims d = cfg.dims;
  Rng rng(cfg.seed);
  Phantom ph{Volume(d, static_cast<float>(cfg.air_hu)), LabelMask(d, 0), BinaryMask(d, 0)};
  std::vector<double> base(d.size(), cfg.air_hu);

  const double by = 0.5 * d.y, bx = 0.5 * d.x;
  const double ry_body = cfg.body_radius_y * d.y, rx_body = cfg.body_radius_x * d.x;

  struct Lung {
    double cz, cy, cx, rz, ry, rx;
    double theta, oblique_offset, horizontal_z;
    double phase_a, phase_b;
  };
  std::array<Lung, 2> lungs{};
  for (int side = 0; side < 2; ++side) {
    Lung& l = lungs[side];
    l.cz = 0.5 * d.z + rng.uniform(-1, 1) * cfg.center_jitter * d.z;
    l.cy = 0.5 * d.y + rng.uniform(-1, 1) * cfg.center_jitter * d.y;
    l.cx = (side == 0 ? 0.5 - cfg.lung_offset_x : 0.5 + cfg.lung_offset_x) * d.x +
           rng.uniform(-1, 1) * cfg.center_jitter * d.x;
    l.rz = rng.uniform(cfg.lung_radius_z[0], cfg.lung_radius_z[1]) * d.z;
    l.ry = rng.uniform(cfg.lung_radius_y[0], cfg.lung_radius_y[1]) * d.y;
    l.rx = rng.uniform(cfg.lung_radius_x[0], cfg.lung_radius_x[1]) * d.x;
    l.theta = (cfg.oblique_deg + rng.uniform(-cfg.fissure_jitter_deg, cfg.fissure_jitter_deg)) * std::numbers::pi / 180.0;
    l.oblique_offset = rng.uniform(-1.0, 1.0);
    l.horizontal_z = l.cz + rng.uniform(cfg.horizontal_offset_lo, cfg.horizontal_offset_hi) * d.z;
    l.phase_a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    l.phase_b = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double amplitude = 2.0 * cfg.incompleteness;

  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const double pz = z + 0.5, py = y + 0.5, px = x + 0.5;
        const std::size_t i = ph.hu.index(z, y, x);
        const double ey = (py - by) / ry_body, ex = (px - bx) / rx_body;
        if (ey * ey + ex * ex <= 1.0) base[i] = cfg.body_hu;
        for (int side = 0; side < 2; ++side) {
          const Lung& l = lungs[side];
          const double qz = (pz - l.cz) / l.rz, qy = (py - l.cy) / l.ry, qx = (px - l.cx) / l.rx;
          if (qz * qz + qy * qy + qx * qx > 1.0) continue;
          base[i] = cfg.lung_hu;
          const double oblique = (pz - l.cz) * std::cos(l.theta) + (py - l.cy) * std::sin(l.theta) - l.oblique_offset;
          const double wobble = amplitude * std::sin(0.35 * px + l.phase_a) * std::cos(0.3 * py + l.phase_b);
          const bool lower = oblique + wobble < 0.0;
          bool fissure = std::abs(oblique) < cfg.fissure_half_width;
          std::uint8_t label;
          if (side == 0) {
            const double horizontal = pz - l.horizontal_z;
            const double hwobble = amplitude * std::cos(0.35 * px + l.phase_b) * std::sin(0.3 * py + l.phase_a);
            if (lower)
              label = 3;
            else
              label = horizontal + hwobble >= 0.0 ? 1 : 2;
            if (oblique >= 0.0 && std::abs(horizontal) < cfg.fissure_half_width) fissure = true;
          } else {
            label = lower ? 5 : 4;
          }
          ph.labels[i] = label;
          if (fissure) {
            base[i] = cfg.fissure_hu;
            ph.fissures[i] = 1;
          }
        }
      }

  for (std::size_t i = 0; i < d.size(); ++i)
    ph.hu[i] = static_cast<float>(base[i] + (cfg.noise_sigma > 0.0 ? cfg.noise_sigma * rng.normal() : 0.0));
  return ph;
}

}  // namespace lobekit
