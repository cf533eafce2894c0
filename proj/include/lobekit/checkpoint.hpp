#pragma once

// Parameter checkpoint, version 1. All integers little-endian.
//
//   bytes 0..7   magic "LBKCKPT\0"
//   u32          format version (1)
//   u32          metadata length L, then L bytes of UTF-8 JSON
//                ({"base_width", "num_classes", "in_channels", "seed", ...})
//   u32          record count R, then R records:
//                  u32 name length, name bytes
//                  u32 rank, rank x u32 dims
//                  prod(dims) x f32 values
//
// Records hold every trainable tensor followed by "<bn>.running_mean" and
// "<bn>.running_var" for each batchnorm layer.

#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lobekit/model.hpp"

namespace lobekit {

inline constexpr char kCheckpointMagic[8] = {'L', 'B', 'K', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LobeNet<float> net;
  nlohmann::json metadata;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorKind::MalformedHeader, "truncated checkpoint");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_record(std::ostream& out, const std::string& name, const ad::Shape& shape, const float* data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(ad::shape_numel(shape) * sizeof(float)));
}

}  // namespace detail

/// `extra` is merged into the metadata block (e.g. preprocessing flags).
inline void save_checkpoint(LobeNet<float>& net, const std::filesystem::path& path, const nlohmann::json& extra = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["base_width"] = net.spec().base_width;
  meta["num_classes"] = net.spec().num_classes;
  meta["in_channels"] = net.spec().in_channels;
  meta["seed"] = net.spec().seed;
  const std::string text = meta.dump();

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));

  auto params = net.parameters();
  auto stats = net.running_stats();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size() + 2 * stats.size()));
  for (auto& p : params) detail::put_record(out, p.name, p.tensor.shape(), p.tensor.data().data());
  for (auto& [name, s] : stats) {
    const ad::Shape shape{static_cast<int>(s->mean.size())};
    detail::put_record(out, name + ".running_mean", shape, s->mean.data());
    detail::put_record(out, name + ".running_var", shape, s->var.data());
  }
  if (!out) fail(ErrorKind::IoFailure, "failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    fail(ErrorKind::MalformedHeader, path.string() + " is not a lobekit checkpoint");
  const std::uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion) fail(ErrorKind::MalformedHeader, "unsupported checkpoint version " + std::to_string(version));
  std::string text(detail::get_u32(in), '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(text.size()))) fail(ErrorKind::MalformedHeader, "truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("checkpoint metadata: ") + e.what());
  }
  LobeNetSpec spec;
  spec.base_width = meta.value("base_width", 16);
  spec.num_classes = meta.value("num_classes", kNumClasses);
  spec.in_channels = meta.value("in_channels", 1);
  spec.seed = meta.value("seed", std::uint64_t{0});
  Checkpoint ck{LobeNet<float>(spec), meta};

  std::map<std::string, float*> targets;
  std::map<std::string, std::size_t> sizes;
  for (auto& p : ck.net.parameters()) {
    targets[p.name] = p.tensor.data().data();
    sizes[p.name] = p.tensor.numel();
  }
  for (auto& [name, s] : ck.net.running_stats()) {
    targets[name + ".running_mean"] = s->mean.data();
    sizes[name + ".running_mean"] = s->mean.size();
    targets[name + ".running_var"] = s->var.data();
    sizes[name + ".running_var"] = s->var.size();
  }
  const std::uint32_t count = detail::get_u32(in);
  std::size_t loaded = 0;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name(detail::get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) fail(ErrorKind::MalformedHeader, "truncated record name");
    ad::Shape shape(detail::get_u32(in));
    for (auto& d : shape) d = static_cast<int>(detail::get_u32(in));
    const std::size_t n = ad::shape_numel(shape);
    auto it = targets.find(name);
    if (it == targets.end() || sizes[name] != n)
      fail(ErrorKind::SizeMismatch, "checkpoint record '" + name + "' does not match the network");
    if (!in.read(reinterpret_cast<char*>(it->second), static_cast<std::streamsize>(n * sizeof(float))))
      fail(ErrorKind::SizeMismatch, "truncated data for '" + name + "'");
    ++loaded;
  }
  if (loaded != targets.size()) fail(ErrorKind::SizeMismatch, "checkpoint is missing records");
  return ck;
}

}  // namespace lobekit
