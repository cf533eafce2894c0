#pragma once

// Randomized sweeps behind the acceptance criteria. Each returns raw counts
// and measured values; callers decide pass/fail against pinned tolerances.

#include <bit>
#include <cstring>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace criteria {

using namespace lobekit;

struct Sweep {
  std::string name;
  int cases = 0;
  int mismatches = 0;
  bool ok() const { return cases > 0 && mismatches == 0; }
};

// ---------------------------------------------------------------------------
// Morphology, hull, components

inline std::vector<Sweep> morphology_sweep(int n, std::uint64_t seed) {
  Rng rng(seed);
  const Dims slice{1, 16, 16};
  Sweep close{"binary_close_2d"}, fill{"fill_holes_2d"}, dilate{"dilate_2d"}, hull{"convex_hull_slice"},
      comps{"select_lung_components"};
  for (int k = 0; k < n; ++k) {
    const BinaryMask m = fixtures::random_slice_mask(rng, slice, k);
    const StructuringElement e = k % 3 == 0 ? StructuringElement::box(3)
                                 : k % 3 == 1 ? StructuringElement::box(5)
                                              : fixtures::random_element(rng);
    ++close.cases;
    close.mismatches += binary_close_2d(m, e) != oracle::close_2d(m, e);
    ++dilate.cases;
    dilate.mismatches += dilate_2d(m, e) != oracle::dilate_2d(m, e);
    ++fill.cases;
    fill.mismatches += fill_holes_2d(m) != oracle::fill_holes_2d(m);
    // Hulls of sparse point sets stress the degenerate paths.
    const BinaryMask pts = k % 2 ? m : fixtures::random_noise_mask(rng, slice, rng.uniform(0.0, 0.03));
    ++hull.cases;
    hull.mismatches += convex_hull_2d(pts) != oracle::convex_hull_2d(pts);

    const BinaryMask vol = k % 3 == 0 ? fixtures::random_noise_mask(rng, {16, 16, 16}, rng.uniform(0.02, 0.12))
                                      : fixtures::random_blob_mask(rng, {16, 16, 16}, rng.integer(1, 6));
    PreprocessConfig cfg;
    cfg.min_component_voxels = static_cast<std::size_t>(std::vector<int>{1, 3, 10, 40}[k % 4]);
    const auto expect = oracle::select_lung_components(vol, *cfg.min_component_voxels);
    ++comps.cases;
    try {
      const BinaryMask got = select_lung_components(vol, cfg);
      comps.mismatches += !expect || got != *expect;
    } catch (const Error& err) {
      comps.mismatches += expect.has_value() || err.kind() != ErrorKind::NoLungCandidate;
    }
  }
  return {close, fill, dilate, hull, comps};
}

inline std::vector<std::uint64_t> random_histogram(Rng& rng, int k) {
  std::vector<std::uint64_t> h(256, 0);
  switch (k % 5) {
    case 0:  // dense
      for (auto& c : h) c = static_cast<std::uint64_t>(rng.integer(0, 1000));
      break;
    case 1:  // few occupied bins, wide empty gaps (plateaus of ties)
      for (int j = 0, m = rng.integer(2, 5); j < m; ++j) h[rng.integer(0, 255)] += rng.integer(1, 50);
      break;
    case 2: {  // mirror-symmetric, ties between k and 256-k
      for (int b = 0; b < 128; ++b) h[b] = h[255 - b] = rng.uniform() < 0.3 ? rng.integer(0, 20) : 0;
      break;
    }
    case 3: {  // bimodal with large counts
      const int a = rng.integer(10, 100), b = rng.integer(150, 245);
      for (int x = 0; x < 256; ++x) {
        const double da = (x - a) / 8.0, db = (x - b) / 12.0;
        h[x] = static_cast<std::uint64_t>(1e6 * std::exp(-da * da) + 5e5 * std::exp(-db * db));
      }
      break;
    }
    default:  // two bins only
      h[rng.integer(0, 127)] = rng.integer(1, 9);
      h[rng.integer(128, 255)] = rng.integer(1, 9);
  }
  if (std::count_if(h.begin(), h.end(), [](std::uint64_t c) { return c > 0; }) < 2) {
    h[0] += 1;
    h[255] += 1;
  }
  return h;
}

// otsu_bin on random histograms, and otsu_threshold on volumes realizing them.
inline Sweep otsu_sweep(int n, std::uint64_t seed) {
  Rng rng(seed);
  Sweep s{"otsu_threshold"};
  for (int k = 0; k < n; ++k) {
    const auto h = random_histogram(rng, k);
    const int expect = oracle::otsu_bin(h);
    ++s.cases;
    s.mismatches += otsu_bin(h) != expect;
    std::uint64_t total = 0;
    for (auto c : h) total += c;
    if (total > 200000) continue;
    std::vector<float> values;
    for (int b = 0; b < 256; ++b)
      for (std::uint64_t c = 0; c < h[b]; ++c) values.push_back((static_cast<float>(b) + 0.5f) / 256.0f);
    const int count = static_cast<int>(values.size());
    const Volume v({1, 1, count}, std::move(values));
    s.mismatches += otsu_threshold(v) != static_cast<float>(expect) / 256.0f;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Losses

struct LossIdentities {
  int fields = 0;
  double worst_ce_gap = 0.0;       // |focal(gamma=0, alpha=1) - mean CE|
  double worst_hand_gap = 0.0;     // single-voxel hand values
  bool hybrid_bit_exact = true;    // lambda = 0 vs dice_loss, value and gradient
};

inline LossIdentities loss_identities(int n, std::uint64_t seed) {
  using T = ad::Tensor<double>;
  Rng rng(seed);
  LossIdentities r;
  LossConfig ce;
  ce.gamma = 0.0;
  for (int k = 0; k < n; ++k) {
    const Dims d{rng.integer(1, 4), rng.integer(1, 5), rng.integer(1, 6)};
    const LabelMask labels = fixtures::random_labels(rng, d);
    std::vector<double> logits(6 * d.size());
    for (auto& v : logits) v = rng.uniform(-4.0, 4.0);
    const T p = ad::softmax_channels(T::from({1, 6, d.z, d.y, d.x}, logits));
    const double focal = focal_loss(p, one_hot<double>(labels), ce).item();
    // Mean cross-entropy from the logits directly (log-sum-exp form).
    double total = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      double mx = -1e300;
      for (int c = 0; c < 6; ++c) mx = std::max(mx, logits[c * d.size() + i]);
      double z = 0.0;
      for (int c = 0; c < 6; ++c) z += std::exp(logits[c * d.size() + i] - mx);
      total += -(logits[labels[i] * d.size() + i] - mx - std::log(z));
    }
    r.worst_ce_gap = std::max(r.worst_ce_gap, std::abs(focal - total / static_cast<double>(d.size())));
    ++r.fields;

    LossConfig h;
    h.lambda = 0.0;
    const T pg = T::from(p.shape(), p.storage(), true);
    const T pd = T::from(p.shape(), p.storage(), true);
    const T g = one_hot<double>(labels);
    const T a = hybrid_loss(pg, g, h);
    const T b = dice_loss(pd, g, h);
    ad::backward(a);
    ad::backward(b);
    r.hybrid_bit_exact = r.hybrid_bit_exact && std::bit_cast<std::uint64_t>(a.item()) == std::bit_cast<std::uint64_t>(b.item()) &&
                         std::memcmp(pg.grad().data(), pd.grad().data(), pg.numel() * sizeof(double)) == 0;
  }

  // Single voxel, target class 0 with probability p; other classes share the rest.
  auto single = [](double p, double gamma) {
    std::vector<double> v(6, (1.0 - p) / 5.0);
    v[0] = p;
    LossConfig cfg;
    cfg.gamma = gamma;
    return focal_loss(T::from({1, 6, 1, 1, 1}, v), one_hot<double>(LabelMask({1, 1, 1}, 0)), cfg).item();
  };
  const std::vector<std::array<double, 3>> hand{
      {0.5, 2.0, 0.25 * std::log(2.0)},
      {0.5, 0.0, std::log(2.0)},
      {0.9, 2.0, 0.01 * -std::log(0.9)},
      {0.25, 1.0, 0.75 * std::log(4.0)},
      {1.0, 2.0, 0.0},
  };
  for (const auto& [p, gamma, expect] : hand) r.worst_hand_gap = std::max(r.worst_hand_gap, std::abs(single(p, gamma) - expect));
  return r;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricSweep {
  int pairs = 0;
  int mismatches = 0;
  int asymmetric = 0;
};

inline MetricSweep metric_sweep(int n, std::uint64_t seed) {
  Rng rng(seed);
  MetricSweep s;
  for (int k = 0; k < n; ++k) {
    // Vary the label alphabet so some classes are absent from one or both masks.
    const LabelMask p = fixtures::random_labels(rng, {8, 8, 8}, rng.integer(0, 5));
    const LabelMask g = fixtures::random_labels(rng, {8, 8, 8}, rng.integer(0, 5));
    const DiceReport rep = dice_average(p, g);
    for (int c = 0; c <= 5; ++c) {
      const double expect = oracle::dice(p, g, c);
      s.mismatches += dice_per_class(p, g, c) != expect;
      if (c >= 1) s.mismatches += rep.per_class[c - 1] != expect;
      s.asymmetric += dice_per_class(p, g, c) != dice_per_class(g, p, c);
    }
    ++s.pairs;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Preprocess completeness

struct Completeness {
  int phantoms = 0;
  std::size_t lung_voxels = 0;
  std::size_t lung_voxels_inside = 0;
  double worst_fraction = 0.0;  // cropped voxels / original voxels
};

inline Completeness preprocess_completeness(int n, std::uint64_t seed) {
  Completeness c;
  for (int k = 0; k < n; ++k) {
    PhantomConfig pc;
    pc.seed = phantom_seed(seed, static_cast<std::size_t>(k));
    const Phantom ph = generate_phantom(pc);
    const LungCrop lc = lung_crop_pipeline(ph.hu);
    const Dims d = ph.labels.dims();
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x)
          if (ph.labels(z, y, x)) {
            ++c.lung_voxels;
            c.lung_voxels_inside += lc.region.contains(z, y, x);
          }
    c.worst_fraction = std::max(c.worst_fraction, static_cast<double>(lc.cropped.size()) / static_cast<double>(d.size()));
    ++c.phantoms;
  }
  return c;
}

// ---------------------------------------------------------------------------
// MetaImage round trip

inline std::vector<Sweep> io_round_trip(int n, std::uint64_t seed, const std::filesystem::path& dir) {
  Rng rng(seed);
  Sweep s16{"int16"}, s8{"uint8"}, s32{"float32"};
  auto dims = [&]() { return Dims{rng.integer(1, 12), rng.integer(1, 12), rng.integer(1, 12)}; };
  auto spacing = [&]() { return Vec3{rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0)}; };
  auto origin = [&]() { return Vec3{rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-500, 500)}; };
  auto same_bits = [](const Volume& a, const Volume& b) {
    return a.dims() == b.dims() && a.spacing() == b.spacing() && a.origin() == b.origin() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
  };
  for (int k = 0; k < n; ++k) {
    Volume v16(dims(), 0.0f, spacing(), origin());
    for (auto& x : v16.data()) x = static_cast<float>(rng.integer(-32768, 32767));
    write_metaimage(v16, dir / "i16.mhd", ElementType::Int16);
    ++s16.cases;
    s16.mismatches += !same_bits(read_volume(dir / "i16.mhd"), v16);

    Volume v32(dims(), 0.0f, spacing(), origin());
    for (auto& x : v32.data()) x = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next()));
    write_metaimage(v32, dir / "f32.mhd", ElementType::Float32);
    ++s32.cases;
    s32.mismatches += !same_bits(read_volume(dir / "f32.mhd"), v32);

    Volume v8(dims(), 0.0f, spacing(), origin());
    for (auto& x : v8.data()) x = static_cast<float>(rng.integer(0, 255));
    write_metaimage(v8, dir / "u8.mhd", ElementType::UInt8);
    LabelMask labels = fixtures::random_labels(rng, dims());
    labels.set_spacing(spacing());
    labels.set_origin(origin());
    write_metaimage(labels, dir / "l8.mhd");
    ++s8.cases;
    s8.mismatches += !same_bits(read_volume(dir / "u8.mhd"), v8) || read_label_mask(dir / "l8.mhd") != labels;
  }
  return {s16, s8, s32};
}

// Each malformed header paired with the error it must raise.
inline Sweep io_error_paths(const std::filesystem::path& dir) {
  Sweep s{"malformed headers"};
  const std::string good =
      "NDims = 3\nDimSize = 2 2 2\nElementType = MET_SHORT\nElementSpacing = 1 1 1\nElementDataFile = e.raw\n";
  std::ofstream(dir / "e.raw", std::ios::binary) << std::string(16, '\0');
  auto variant = [&](const std::string& from, const std::string& to) {
    std::string t = good;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  const std::vector<std::pair<std::string, ErrorKind>> cases{
      {variant("NDims = 3\n", ""), ErrorKind::MalformedHeader},
      {variant("ElementSpacing = 1 1 1\n", ""), ErrorKind::MalformedHeader},
      {variant("NDims = 3", "NDims = 4"), ErrorKind::MalformedHeader},
      {variant("DimSize = 2 2 2", "DimSize = 2 2"), ErrorKind::MalformedHeader},
      {variant("DimSize = 2 2 2", "DimSize = 2 x 2"), ErrorKind::MalformedHeader},
      {variant("NDims = 3\n", "NDims = 3\nCompressedData = True\n"), ErrorKind::MalformedHeader},
      {variant("NDims = 3\n", "NDims = 3\nBinaryDataByteOrderMSB = True\n"), ErrorKind::MalformedHeader},
      {variant("MET_SHORT", "MET_USHORT"), ErrorKind::UnsupportedElementType},
      {variant("DimSize = 2 2 2", "DimSize = 3 2 2"), ErrorKind::SizeMismatch},
      {variant("e.raw", "missing.raw"), ErrorKind::IoFailure},
  };
  for (const auto& [text, kind] : cases) {
    std::ofstream(dir / "e.mhd") << text;
    ++s.cases;
    try {
      read_metaimage(dir / "e.mhd");
      ++s.mismatches;
    } catch (const Error& e) {
      s.mismatches += e.kind() != kind;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Single-sample overfit

// Smallest seed whose 8^3 phantom holds background and all five lobes.
struct Overfit {
  int first_epoch_below = 0;  // 0 when never reached
  double best_loss = 0.0;
  double final_loss = 0.0;
  int windows = 0;            // 50-epoch windows checked before the target was reached
  int window_violations = 0;  // windows whose closing loss is not below the opening loss
};

inline Overfit single_sample_overfit(int epochs, double target) {
  const Phantom ph = fixtures::tiny_phantom();
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.augment = AugmentConfig::none();
  const TrainResult tr = train({{"overfit", hu_normalize(ph.hu), ph.labels}}, cfg, LobeNetSpec{});
  Overfit r{0, 1e300, tr.history.back().mean_loss};
  for (const auto& e : tr.history) {
    r.best_loss = std::min(r.best_loss, e.mean_loss);
    if (!r.first_epoch_below && e.mean_loss < target) r.first_epoch_below = e.epoch;
  }
  const int horizon = r.first_epoch_below ? r.first_epoch_below : epochs;
  for (int e = 1; e + 50 <= horizon; ++e) {
    ++r.windows;
    if (!(tr.history[e + 49].mean_loss < tr.history[e - 1].mean_loss)) ++r.window_violations;
  }
  return r;
}

}  // namespace criteria
