#pragma once

// Lung field extraction and convex-hull cropping of a CT volume.
//
// Per-slice operators treat each z-slice of a BinaryMask as an independent
// 2D image. Pixels outside the slice read as 0 for both dilation and
// erosion, so erosion (and therefore closing) can shrink shapes that touch
// the slice border.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "lobekit/volume.hpp"

namespace lobekit {

/// Odd-sized 2D stencil anchored at its centre.
class StructuringElement {
 public:
  StructuringElement(int height, int width, std::vector<std::uint8_t> shape)
      : height_(height), width_(width), shape_(std::move(shape)) {
    if (height <= 0 || width <= 0 || height % 2 == 0 || width % 2 == 0)
      fail(ErrorKind::InvalidConfig, "structuring element sides must be odd");
    if (shape_.size() != static_cast<std::size_t>(height) * width)
      fail(ErrorKind::InvalidConfig, "structuring element shape does not match its size");
  }
  static StructuringElement box(int side) {
    return StructuringElement(side, side, std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side, 1));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int anchor_y() const { return height_ / 2; }
  int anchor_x() const { return width_ / 2; }
  bool at(int r, int c) const { return shape_[static_cast<std::size_t>(r) * width_ + c] != 0; }

  /// Active offsets relative to the anchor.
  std::vector<std::array<int, 2>> offsets() const {
    std::vector<std::array<int, 2>> out;
    for (int r = 0; r < height_; ++r)
      for (int c = 0; c < width_; ++c)
        if (at(r, c)) out.push_back({r - anchor_y(), c - anchor_x()});
    return out;
  }

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> shape_;
};

struct PreprocessConfig {
  float hu_lo = kHuLo;
  float hu_hi = kHuHi;
  StructuringElement close_kernel = StructuringElement::box(3);
  StructuringElement dilate_kernel = StructuringElement::box(5);
  /// Unset means 0.1% of the volume's voxel count.
  std::optional<std::size_t> min_component_voxels;
  int histogram_bins = 256;

  std::size_t component_floor(const Dims& d) const {
    if (min_component_voxels) return *min_component_voxels;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.001 * static_cast<double>(d.size()))));
  }
};

// ---------------------------------------------------------------------------
// OTSU

inline int histogram_bin(float v, int bins) {
  const int b = static_cast<int>(std::floor(static_cast<double>(v) * bins));
  return std::clamp(b, 0, bins - 1);
}

inline std::vector<std::uint64_t> intensity_histogram(const Volume& v, int bins = 256) {
  std::vector<std::uint64_t> h(static_cast<std::size_t>(bins), 0);
  for (float x : v.data()) ++h[static_cast<std::size_t>(histogram_bin(x, bins))];
  return h;
}

/// Index k in [1, bins-1] of the bin edge that maximises between-class
/// variance, where class 0 holds bins [0, k). Ties resolve to the smallest k.
///
/// With n0, n1 the class counts and s0, s1 the sums of bin indices, the
/// variance is proportional to (s0*n1 - s1*n0)^2 / (n0*n1); candidates are
/// compared by exact integer cross-multiplication.
inline int otsu_bin(const std::vector<std::uint64_t>& hist) {
  using boost::multiprecision::cpp_int;
  const int bins = static_cast<int>(hist.size());
  if (std::count_if(hist.begin(), hist.end(), [](std::uint64_t c) { return c > 0; }) < 2)
    fail(ErrorKind::DegenerateHistogram, "histogram has fewer than two non-empty bins");

  std::uint64_t total = 0;
  cpp_int total_sum = 0;
  for (int b = 0; b < bins; ++b) {
    total += hist[b];
    total_sum += cpp_int(hist[b]) * b;
  }
  int best_k = -1;
  cpp_int best_num = 0, best_den = 1;
  std::uint64_t n0 = 0;
  cpp_int s0 = 0;
  for (int k = 1; k < bins; ++k) {
    n0 += hist[k - 1];
    s0 += cpp_int(hist[k - 1]) * (k - 1);
    const std::uint64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const cpp_int s1 = total_sum - s0;
    const cpp_int diff = s0 * n1 - s1 * n0;
    const cpp_int num = diff * diff;
    const cpp_int den = cpp_int(n0) * n1;
    if (best_k < 0 || num * best_den > best_num * den) {
      best_k = k;
      best_num = num;
      best_den = den;
    }
  }
  return best_k;
}

inline float otsu_threshold(const Volume& normalized, int bins = 256) {
  return static_cast<float>(otsu_bin(intensity_histogram(normalized, bins))) / static_cast<float>(bins);
}

/// Foreground = below threshold (air and lung parenchyma are dark).
inline BinaryMask binarize(const Volume& v, float threshold) {
  BinaryMask m(v.dims(), 0, v.spacing(), v.origin());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] < threshold ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Per-slice morphology

namespace detail {

inline void dilate_slice(const std::uint8_t* in, std::uint8_t* out, int h, int w, const StructuringElement& k) {
  const auto offs = k.offsets();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 0;
      for (const auto& [dy, dx] : offs) {
        const int sy = y - dy, sx = x - dx;
        if (sy >= 0 && sy < h && sx >= 0 && sx < w && in[sy * w + sx]) {
          v = 1;
          break;
        }
      }
      out[y * w + x] = v;
    }
}

inline void erode_slice(const std::uint8_t* in, std::uint8_t* out, int h, int w, const StructuringElement& k) {
  const auto offs = k.offsets();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = 1;
      for (const auto& [dy, dx] : offs) {
        const int sy = y + dy, sx = x + dx;
        if (sy < 0 || sy >= h || sx < 0 || sx >= w || !in[sy * w + sx]) {
          v = 0;
          break;
        }
      }
      out[y * w + x] = v;
    }
}

inline void fill_holes_slice(const std::uint8_t* in, std::uint8_t* out, int h, int w) {
  // Background reachable from the border through 4-neighbours stays background.
  std::vector<std::uint8_t> outside(static_cast<std::size_t>(h) * w, 0);
  std::deque<int> queue;
  auto seed = [&](int y, int x) {
    const int i = y * w + x;
    if (!in[i] && !outside[i]) {
      outside[i] = 1;
      queue.push_back(i);
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(0, x);
    seed(h - 1, x);
  }
  for (int y = 0; y < h; ++y) {
    seed(y, 0);
    seed(y, w - 1);
  }
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const int y = i / w, x = i % w;
    if (y > 0) seed(y - 1, x);
    if (y + 1 < h) seed(y + 1, x);
    if (x > 0) seed(y, x - 1);
    if (x + 1 < w) seed(y, x + 1);
  }
  for (int i = 0; i < h * w; ++i) out[i] = (in[i] || !outside[i]) ? 1 : 0;
}

struct Point {
  std::int64_t y;
  std::int64_t x;
  friend bool operator==(const Point&, const Point&) = default;
};

inline std::int64_t cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Andrew's monotone chain; counter-clockwise in (x, y), collinear points dropped.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

inline void convex_hull_slice(const std::uint8_t* in, std::uint8_t* out, int h, int w) {
  // Row extremes carry every hull vertex.
  std::vector<Point> pts;
  for (int y = 0; y < h; ++y) {
    int first = -1, last = -1;
    for (int x = 0; x < w; ++x)
      if (in[y * w + x]) {
        if (first < 0) first = x;
        last = x;
      }
    if (first >= 0) {
      pts.push_back({y, first});
      if (last != first) pts.push_back({y, last});
    }
  }
  std::fill(out, out + static_cast<std::size_t>(h) * w, 0);
  if (pts.empty()) return;
  const auto hull = convex_hull(pts);
  std::int64_t ymin = hull[0].y, ymax = hull[0].y, xmin = hull[0].x, xmax = hull[0].x;
  for (const auto& p : hull) {
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
  }
  const std::size_t n = hull.size();
  for (std::int64_t y = ymin; y <= ymax; ++y)
    for (std::int64_t x = xmin; x <= xmax; ++x) {
      const Point p{y, x};
      bool inside = true;
      if (n == 1) {
        inside = p == hull[0];
      } else if (n == 2) {
        inside = cross(hull[0], hull[1], p) == 0;  // bounding box already limits to the segment
      } else {
        for (std::size_t i = 0; i < n && inside; ++i) inside = cross(hull[i], hull[(i + 1) % n], p) >= 0;
      }
      if (inside) out[y * w + x] = 1;
    }
}

template <typename F>
BinaryMask per_slice(const BinaryMask& m, F&& op) {
  BinaryMask out(m.dims(), 0, m.spacing(), m.origin());
  const int h = m.dims().y, w = m.dims().x;
  for (int z = 0; z < m.dims().z; ++z) op(m.slice(z), out.slice(z), h, w);
  return out;
}

}  // namespace detail

inline BinaryMask dilate_2d(const BinaryMask& m, const StructuringElement& k) {
  return detail::per_slice(m, [&](const std::uint8_t* in, std::uint8_t* out, int h, int w) {
    detail::dilate_slice(in, out, h, w, k);
  });
}

inline BinaryMask erode_2d(const BinaryMask& m, const StructuringElement& k) {
  return detail::per_slice(m, [&](const std::uint8_t* in, std::uint8_t* out, int h, int w) {
    detail::erode_slice(in, out, h, w, k);
  });
}

inline BinaryMask binary_close_2d(const BinaryMask& m, const StructuringElement& k) {
  return erode_2d(dilate_2d(m, k), k);
}

inline BinaryMask fill_holes_2d(const BinaryMask& m) {
  return detail::per_slice(m, [](const std::uint8_t* in, std::uint8_t* out, int h, int w) {
    detail::fill_holes_slice(in, out, h, w);
  });
}

/// Filled convex hull of each slice's foreground; empty slices stay empty.
inline BinaryMask convex_hull_2d(const BinaryMask& m) {
  return detail::per_slice(m, [](const std::uint8_t* in, std::uint8_t* out, int h, int w) {
    detail::convex_hull_slice(in, out, h, w);
  });
}

// ---------------------------------------------------------------------------
// Connected components

/// 26-connected components in 3D, labelled 1..n in raster order of their first voxel.
inline std::vector<int> label_components_26(const BinaryMask& m, int* count = nullptr) {
  const Dims d = m.dims();
  std::vector<int> label(m.size(), 0);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m[start] || label[start]) continue;
    ++next;
    label[start] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int z = static_cast<int>(i / d.slice_size());
      const int y = static_cast<int>((i / d.x) % d.y);
      const int x = static_cast<int>(i % d.x);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nz = z + dz, ny = y + dy, nx = x + dx;
            if (!m.in_bounds(nz, ny, nx)) continue;
            const std::size_t j = m.index(nz, ny, nx);
            if (m[j] && !label[j]) {
              label[j] = next;
              stack.push_back(j);
            }
          }
    }
  }
  if (count) *count = next;
  return label;
}

/// Keeps at most the two largest 26-connected components that avoid the
/// x/y faces of the volume and reach the configured size floor.
inline BinaryMask select_lung_components(const BinaryMask& m, const PreprocessConfig& cfg = {}) {
  int n = 0;
  const auto label = label_components_26(m, &n);
  const Dims d = m.dims();
  std::vector<std::size_t> size(static_cast<std::size_t>(n) + 1, 0);
  std::vector<std::uint8_t> touches(static_cast<std::size_t>(n) + 1, 0);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const int l = label[m.index(z, y, x)];
        if (!l) continue;
        ++size[l];
        if (y == 0 || x == 0 || y == d.y - 1 || x == d.x - 1) touches[l] = 1;
      }
  const std::size_t floor = cfg.component_floor(d);
  std::vector<int> candidates;
  for (int l = 1; l <= n; ++l)
    if (!touches[l] && size[l] >= floor) candidates.push_back(l);
  if (candidates.empty()) fail(ErrorKind::NoLungCandidate, "no interior component reaches the size floor");
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) { return size[a] > size[b]; });
  if (candidates.size() > 2) candidates.resize(2);

  BinaryMask out(d, 0, m.spacing(), m.origin());
  for (std::size_t i = 0; i < m.size(); ++i)
    if (label[i] && (label[i] == candidates[0] || (candidates.size() > 1 && label[i] == candidates[1]))) out[i] = 1;
  return out;
}

/// Tight bounding box of the foreground; nullopt for an empty mask.
inline std::optional<CropRegion> bounding_box(const BinaryMask& m) {
  const Dims d = m.dims();
  CropRegion r{{d.z, d.y, d.x}, {0, 0, 0}};
  bool any = false;
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x)
        if (m(z, y, x)) {
          any = true;
          r.lo = {std::min(r.lo[0], z), std::min(r.lo[1], y), std::min(r.lo[2], x)};
          r.hi = {std::max(r.hi[0], z + 1), std::max(r.hi[1], y + 1), std::max(r.hi[2], x + 1)};
        }
  if (!any) return std::nullopt;
  return r;
}

struct LungCrop {
  Volume cropped;      // normalized intensities inside `region`
  CropRegion region;
  BinaryMask hull;     // dilated per-slice hull, full input dims
  BinaryMask lungs;    // selected lung components, full input dims
  float threshold = 0.0f;
};

/// normalize -> OTSU -> binarize -> component selection -> close ->
/// hole fill -> per-slice hull -> dilation -> bounding-box crop.
inline LungCrop lung_crop_pipeline(const Volume& hu, const PreprocessConfig& cfg = {}) {
  LungCrop out;
  const Volume norm = hu_normalize(hu, cfg.hu_lo, cfg.hu_hi);
  out.threshold = otsu_threshold(norm, cfg.histogram_bins);
  const BinaryMask raw = binarize(norm, out.threshold);
  out.lungs = select_lung_components(raw, cfg);
  const BinaryMask filled = fill_holes_2d(binary_close_2d(out.lungs, cfg.close_kernel));
  out.hull = dilate_2d(convex_hull_2d(filled), cfg.dilate_kernel);
  const auto box = bounding_box(out.hull);
  if (!box) fail(ErrorKind::NoLungCandidate, "hull mask is empty");
  out.region = *box;
  out.cropped = crop(norm, out.region);
  return out;
}

}  // namespace lobekit
