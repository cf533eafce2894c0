#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lobekit/error.hpp"

namespace lobekit {

/// Extent of a voxel grid in (z, y, x) order; z is the slice axis.
struct Dims {
  int z = 0;
  int y = 0;
  int x = 0;

  constexpr std::size_t size() const {
    return static_cast<std::size_t>(z) * static_cast<std::size_t>(y) * static_cast<std::size_t>(x);
  }
  constexpr std::size_t slice_size() const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(x); }
  constexpr bool valid() const { return z > 0 && y > 0 && x > 0; }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

using Vec3 = std::array<double, 3>;  // (z, y, x), millimetres

enum class ElementType { Int16, UInt8, Float32 };

/// Half-open voxel box: lo inclusive, hi exclusive, both (z, y, x).
struct CropRegion {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};

  Dims dims() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool within(const Dims& d) const {
    const std::array<int, 3> ext{d.z, d.y, d.x};
    for (int a = 0; a < 3; ++a)
      if (lo[a] < 0 || lo[a] >= hi[a] || hi[a] > ext[a]) return false;
    return true;
  }
  bool contains(int z, int y, int x) const {
    return z >= lo[0] && z < hi[0] && y >= lo[1] && y < hi[1] && x >= lo[2] && x < hi[2];
  }
  /// Region `inner` expressed relative to this region, mapped back to the parent grid.
  CropRegion compose(const CropRegion& inner) const {
    CropRegion r;
    for (int a = 0; a < 3; ++a) {
      r.lo[a] = lo[a] + inner.lo[a];
      r.hi[a] = lo[a] + inner.hi[a];
    }
    return r;
  }
  friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

/// Dense z-major voxel grid with physical metadata. `Tag` separates grids
/// that share a storage type but not a meaning (labels vs. binary masks).
template <typename T, typename Tag>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Dims dims, T fill = T{}, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0})
      : dims_(dims), spacing_(spacing), origin_(origin), data_(dims.size(), fill) {
    check();
  }
  Grid(Dims dims, std::vector<T> data, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0})
      : dims_(dims), spacing_(spacing), origin_(origin), data_(std::move(data)) {
    check();
  }

  const Dims& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  void set_spacing(const Vec3& s) {
    spacing_ = s;
    check();
  }
  void set_origin(const Vec3& o) { origin_ = o; }

  std::size_t size() const { return data_.size(); }
  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * dims_.y + static_cast<std::size_t>(y)) * dims_.x + static_cast<std::size_t>(x);
  }
  bool in_bounds(int z, int y, int x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < dims_.z && y < dims_.y && x < dims_.x;
  }

  T& operator()(int z, int y, int x) { return data_[index(z, y, x)]; }
  const T& operator()(int z, int y, int x) const { return data_[index(z, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }
  T* slice(int z) { return data_.data() + static_cast<std::size_t>(z) * dims_.slice_size(); }
  const T* slice(int z) const { return data_.data() + static_cast<std::size_t>(z) * dims_.slice_size(); }

  bool same_geometry(const Grid& o) const { return dims_ == o.dims_; }
  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  void check() const {
    if (!dims_.valid()) fail(ErrorKind::ShapeMismatch, "grid dims must be positive");
    if (data_.size() != dims_.size()) fail(ErrorKind::SizeMismatch, "grid data length does not match dims");
    for (double s : spacing_)
      if (!(s > 0.0)) fail(ErrorKind::InvalidConfig, "spacing components must be positive");
  }

  Dims dims_{};
  Vec3 spacing_{1.0, 1.0, 1.0};
  Vec3 origin_{0.0, 0.0, 0.0};
  std::vector<T> data_;
};

struct VolumeTag {};
struct LabelTag {};
struct MaskTag {};

/// Intensity volume (HU before hu_normalize, [0,1] after).
using Volume = Grid<float, VolumeTag>;
/// Class ids 0..5: background, RU, RM, RL, LU, LL.
using LabelMask = Grid<std::uint8_t, LabelTag>;
/// 0/1 voxel set.
using BinaryMask = Grid<std::uint8_t, MaskTag>;

inline constexpr int kNumClasses = 6;
inline constexpr std::array<const char*, 5> kLobeNames{"RU", "RM", "RL", "LU", "LL"};

inline constexpr float kHuLo = -1000.0f;
inline constexpr float kHuHi = 600.0f;

/// Clamps HU to [lo, hi] and maps that window linearly onto [0, 1].
inline float hu_to_unit(float hu, float lo = kHuLo, float hi = kHuHi) {
  const float c = std::clamp(hu, lo, hi);
  return (c - lo) / (hi - lo);
}

inline Volume hu_normalize(const Volume& v, float lo = kHuLo, float hi = kHuHi) {
  if (!(lo < hi)) fail(ErrorKind::InvalidConfig, "HU window must satisfy lo < hi");
  Volume out = v;
  for (auto& value : out.data()) value = hu_to_unit(value, lo, hi);
  return out;
}

inline bool labels_valid(const LabelMask& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](std::uint8_t v) { return v < kNumClasses; });
}

template <typename T, typename Tag>
Grid<T, Tag> crop(const Grid<T, Tag>& g, const CropRegion& r) {
  if (!r.within(g.dims())) fail(ErrorKind::RegionOutOfBounds, "crop region exceeds grid dims");
  const Dims od = r.dims();
  Vec3 origin = g.origin();
  for (int a = 0; a < 3; ++a) origin[a] += r.lo[a] * g.spacing()[a];
  Grid<T, Tag> out(od, T{}, g.spacing(), origin);
  for (int z = 0; z < od.z; ++z)
    for (int y = 0; y < od.y; ++y) {
      const T* src = &g(z + r.lo[0], y + r.lo[1], r.lo[2]);
      std::copy(src, src + od.x, &out(z, y, 0));
    }
  return out;
}

/// Inverse of crop: writes `inner` into `outer` at the region offset.
template <typename T, typename Tag>
void paste(Grid<T, Tag>& outer, const Grid<T, Tag>& inner, const CropRegion& r) {
  if (!r.within(outer.dims()) || !(r.dims() == inner.dims()))
    fail(ErrorKind::RegionOutOfBounds, "paste region does not match grids");
  const Dims d = inner.dims();
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y) std::copy(&inner(z, y, 0), &inner(z, y, 0) + d.x, &outer(z + r.lo[0], y + r.lo[1], r.lo[2]));
}

}  // namespace lobekit
