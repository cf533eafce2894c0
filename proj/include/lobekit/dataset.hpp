#pragma once

// Paired image/label collections on disk and their conversion to training samples.
//
// A dataset directory holds <id>_image.mhd / <id>_labels.mhd pairs plus
// manifest.json: {"samples": [{"id", "image", "labels", "seed"?}, ...], ...}.

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lobekit/metaimage.hpp"
#include "lobekit/phantom.hpp"
#include "lobekit/preprocess.hpp"
#include "lobekit/trainer.hpp"

namespace lobekit {

struct RawSample {
  std::string id;
  Volume hu;
  LabelMask labels;
};

/// A sample ready for the network plus where it came from in the raw grid.
struct PreparedSample {
  TrainingSample sample;
  CropRegion region;  // full extent when no hull crop was applied
  Dims raw_dims;
};

inline std::uint64_t phantom_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 step over (base, index)
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<RawSample> generate_phantom_set(std::size_t n, const PhantomConfig& base, std::uint64_t seed) {
  std::vector<RawSample> out;
  for (std::size_t k = 0; k < n; ++k) {
    PhantomConfig cfg = base;
    cfg.seed = phantom_seed(seed, k);
    Phantom ph = generate_phantom(cfg);
    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%03zu", k);
    out.push_back({id, std::move(ph.hu), std::move(ph.labels)});
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<RawSample>& samples,
                          const nlohmann::json& extra = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    const std::string image = s.id + "_image.mhd", labels = s.id + "_labels.mhd";
    write_metaimage(s.hu, dir / image, ElementType::Int16);
    write_metaimage(s.labels, dir / labels);
    manifest["samples"].push_back({{"id", s.id}, {"image", image}, {"labels", labels}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorKind::IoFailure, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

inline std::vector<RawSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::IoFailure, "missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("manifest.json: ") + e.what());
  }
  if (!manifest.contains("samples") || !manifest["samples"].is_array())
    fail(ErrorKind::MalformedHeader, "manifest.json has no 'samples' array");
  std::vector<RawSample> out;
  for (const auto& entry : manifest["samples"]) {
    if (!entry.contains("image") || !entry.contains("labels"))
      fail(ErrorKind::MalformedHeader, "manifest entry lacks image/labels");
    RawSample s;
    s.id = entry.value("id", entry["image"].get<std::string>());
    s.hu = read_volume(dir / entry["image"].get<std::string>());
    s.labels = read_label_mask(dir / entry["labels"].get<std::string>());
    if (!(s.hu.dims() == s.labels.dims())) fail(ErrorKind::ShapeMismatch, "sample " + s.id + ": image/label dims differ");
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorKind::EmptyDataset, "manifest lists no samples");
  return out;
}

/// Normalizes, and with `hull_crop` crops both volume and labels to the lung hull box.
inline PreparedSample prepare_sample(const RawSample& raw, bool hull_crop, const PreprocessConfig& cfg = {}) {
  PreparedSample out;
  out.raw_dims = raw.hu.dims();
  if (hull_crop) {
    LungCrop lc = lung_crop_pipeline(raw.hu, cfg);
    out.region = lc.region;
    out.sample = {raw.id, std::move(lc.cropped), crop(raw.labels, lc.region)};
  } else {
    const Dims d = raw.hu.dims();
    out.region = CropRegion{{0, 0, 0}, {d.z, d.y, d.x}};
    out.sample = {raw.id, hu_normalize(raw.hu, cfg.hu_lo, cfg.hu_hi), raw.labels};
  }
  return out;
}

/// Runs inference on a raw HU scan and returns a mask on the raw grid
/// (background outside the crop box when hull cropping is used).
inline LabelMask segment(LobeNet<float>& net, const Volume& hu, bool hull_crop, const PreprocessConfig& cfg = {}) {
  if (!hull_crop) return infer(net, hu_normalize(hu, cfg.hu_lo, cfg.hu_hi));
  const LungCrop lc = lung_crop_pipeline(hu, cfg);
  LabelMask full(hu.dims(), 0, hu.spacing(), hu.origin());
  paste(full, infer(net, lc.cropped), lc.region);
  return full;
}

/// Seeded shuffle, then the first round(fraction * n) indices train (at least
/// one sample on each side when n >= 2).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double train_fraction,
                                                                                  std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.integer(0, static_cast<int>(i) - 1))]);
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> te(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  return {tr, te};
}

}  // namespace lobekit
