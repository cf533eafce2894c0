#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <filesystem>
#include <string>

#include "lobekit/lobekit.hpp"

namespace fixtures {

using namespace lobekit;

inline BinaryMask random_noise_mask(Rng& rng, Dims d, double density) {
  BinaryMask m(d, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < density ? 1 : 0;
  return m;
}

// Union of random axis-aligned ellipsoids, optionally sprinkled with noise.
inline BinaryMask random_blob_mask(Rng& rng, Dims d, int blobs, double noise = 0.0) {
  BinaryMask m(d, 0);
  for (int b = 0; b < blobs; ++b) {
    const double cz = rng.uniform(0, d.z), cy = rng.uniform(0, d.y), cx = rng.uniform(0, d.x);
    const double rz = rng.uniform(0.5, d.z / 3.0), ry = rng.uniform(0.5, d.y / 3.0), rx = rng.uniform(0.5, d.x / 3.0);
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) {
          const double qz = (z - cz) / rz, qy = (y - cy) / ry, qx = (x - cx) / rx;
          if (qz * qz + qy * qy + qx * qx <= 1.0) m(z, y, x) = 1;
        }
  }
  for (std::size_t i = 0; i < m.size(); ++i)
    if (rng.uniform() < noise) m[i] ^= 1;
  return m;
}

// Mixed corpus: sparse noise, dense noise, blobs, blobs with holes.
inline BinaryMask random_slice_mask(Rng& rng, Dims d, int k) {
  switch (k % 4) {
    case 0: return random_noise_mask(rng, d, rng.uniform(0.02, 0.15));
    case 1: return random_noise_mask(rng, d, rng.uniform(0.3, 0.8));
    case 2: return random_blob_mask(rng, d, rng.integer(1, 4));
    default: return random_blob_mask(rng, d, rng.integer(1, 4), 0.08);
  }
}

inline StructuringElement random_element(Rng& rng) {
  const int h = 2 * rng.integer(0, 2) + 1, w = 2 * rng.integer(0, 2) + 1;
  std::vector<std::uint8_t> shape(static_cast<std::size_t>(h) * w);
  for (auto& s : shape) s = rng.uniform() < 0.6 ? 1 : 0;
  shape[shape.size() / 2] = 1;
  return StructuringElement(h, w, shape);
}

inline LabelMask random_labels(Rng& rng, Dims d, int max_label = 5) {
  LabelMask m(d, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(rng.integer(0, max_label));
  return m;
}

// First seed, counting from 0, whose 8^3 phantom holds all six classes.
inline Phantom tiny_phantom() {
  PhantomConfig pc;
  pc.dims = {8, 8, 8};
  for (std::uint64_t seed = 0;; ++seed) {
    pc.seed = seed;
    Phantom ph = generate_phantom(pc);
    std::array<bool, 6> seen{};
    for (auto v : ph.labels.data()) seen[v] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return ph;
  }
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() / ("lobekit_" + tag + "_" + std::to_string(rng.next() % 1000000007ULL));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
