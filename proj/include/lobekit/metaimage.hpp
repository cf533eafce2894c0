#pragma once

// MetaImage (.mhd + .raw) reader/writer. Supports the uncompressed,
// little-endian, 3D subset with MET_SHORT, MET_UCHAR and MET_FLOAT data.

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>

#include "lobekit/volume.hpp"

namespace lobekit {

static_assert(std::endian::native == std::endian::little, "raw IO assumes a little-endian host");

struct MetaImage {
  ElementType type = ElementType::Float32;
  std::variant<Volume, LabelMask> image;

  const Volume& volume() const { return std::get<Volume>(image); }
  const LabelMask& labels() const { return std::get<LabelMask>(image); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::vector<double> parse_numbers(const std::string& key, const std::string& text, std::size_t count) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) fail(ErrorKind::MalformedHeader, key + " has a non-numeric entry");
    out.push_back(v);
  }
  if (out.size() != count) fail(ErrorKind::MalformedHeader, key + " must have " + std::to_string(count) + " entries");
  return out;
}

inline const char* element_tag(ElementType t) {
  switch (t) {
    case ElementType::Int16: return "MET_SHORT";
    case ElementType::UInt8: return "MET_UCHAR";
    case ElementType::Float32: return "MET_FLOAT";
  }
  return "MET_FLOAT";
}

inline std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::Int16: return 2;
    case ElementType::UInt8: return 1;
    case ElementType::Float32: return 4;
  }
  return 4;
}

inline bool is_true(const std::string& v) { return v == "True" || v == "true" || v == "1"; }

inline void write_header(const std::filesystem::path& mhd, const Dims& d, const Vec3& spacing, const Vec3& origin,
                         ElementType type) {
  std::filesystem::path raw = mhd;
  raw.replace_extension(".raw");
  std::ofstream out(mhd, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + mhd.string() + " for writing");
  // Header vectors are (x, y, z); in-memory ordering is (z, y, x).
  out << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "Offset = " << format_double(origin[2]) << ' ' << format_double(origin[1]) << ' ' << format_double(origin[0])
      << "\n"
      << "ElementSpacing = " << format_double(spacing[2]) << ' ' << format_double(spacing[1]) << ' '
      << format_double(spacing[0]) << "\n"
      << "DimSize = " << d.x << ' ' << d.y << ' ' << d.z << "\n"
      << "ElementType = " << element_tag(type) << "\n"
      << "ElementDataFile = " << raw.filename().string() << "\n";
  if (!out) fail(ErrorKind::IoFailure, "failed writing " + mhd.string());
}

inline void write_raw(const std::filesystem::path& mhd, const void* bytes, std::size_t n) {
  std::filesystem::path raw = mhd;
  raw.replace_extension(".raw");
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + raw.string() + " for writing");
  out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
  if (!out) fail(ErrorKind::IoFailure, "failed writing " + raw.string());
}

}  // namespace detail

inline MetaImage read_metaimage(const std::filesystem::path& mhd) {
  std::ifstream in(mhd);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + mhd.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (!detail::trim(line).empty()) fail(ErrorKind::MalformedHeader, "line without '=': " + line);
      continue;
    }
    kv[detail::trim(std::string_view(line).substr(0, eq))] = detail::trim(std::string_view(line).substr(eq + 1));
  }
  for (const char* key : {"NDims", "DimSize", "ElementType", "ElementSpacing", "ElementDataFile"})
    if (!kv.contains(key)) fail(ErrorKind::MalformedHeader, std::string("missing required key ") + key);

  if (kv["NDims"] != "3") fail(ErrorKind::MalformedHeader, "only NDims = 3 is supported");
  if (kv.contains("CompressedData") && detail::is_true(kv["CompressedData"]))
    fail(ErrorKind::MalformedHeader, "compressed MetaImage data is not supported");
  for (const char* key : {"BinaryDataByteOrderMSB", "ElementByteOrderMSB"})
    if (kv.contains(key) && detail::is_true(kv[key])) fail(ErrorKind::MalformedHeader, "big-endian data is not supported");

  ElementType type;
  const std::string& et = kv["ElementType"];
  if (et == "MET_SHORT")
    type = ElementType::Int16;
  else if (et == "MET_UCHAR")
    type = ElementType::UInt8;
  else if (et == "MET_FLOAT")
    type = ElementType::Float32;
  else
    fail(ErrorKind::UnsupportedElementType, "element type " + et);

  const auto size = detail::parse_numbers("DimSize", kv["DimSize"], 3);
  const auto sp = detail::parse_numbers("ElementSpacing", kv["ElementSpacing"], 3);
  Vec3 origin{0.0, 0.0, 0.0};
  const std::string offset_key = kv.contains("Offset") ? "Offset" : (kv.contains("Origin") ? "Origin" : "");
  if (!offset_key.empty()) {
    const auto o = detail::parse_numbers(offset_key, kv[offset_key], 3);
    origin = {o[2], o[1], o[0]};
  }
  for (double s : size)
    if (s < 1 || s != std::floor(s)) fail(ErrorKind::MalformedHeader, "DimSize entries must be positive integers");
  for (double s : sp)
    if (!(s > 0)) fail(ErrorKind::MalformedHeader, "ElementSpacing entries must be positive");
  const Dims dims{static_cast<int>(size[2]), static_cast<int>(size[1]), static_cast<int>(size[0])};
  const Vec3 spacing{sp[2], sp[1], sp[0]};

  const std::string& file = kv["ElementDataFile"];
  if (file == "LOCAL" || file == "LIST") fail(ErrorKind::MalformedHeader, "ElementDataFile " + file + " is not supported");
  const std::filesystem::path raw = mhd.parent_path() / file;
  std::ifstream rin(raw, std::ios::binary);
  if (!rin) fail(ErrorKind::IoFailure, "cannot open data file " + raw.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(rin)), std::istreambuf_iterator<char>());
  const std::size_t expected = dims.size() * detail::element_size(type);
  if (bytes.size() != expected)
    fail(ErrorKind::SizeMismatch, "data file holds " + std::to_string(bytes.size()) + " bytes, header implies " +
                                      std::to_string(expected));

  MetaImage result;
  result.type = type;
  switch (type) {
    case ElementType::UInt8: {
      std::vector<std::uint8_t> data(dims.size());
      std::memcpy(data.data(), bytes.data(), bytes.size());
      result.image = LabelMask(dims, std::move(data), spacing, origin);
      break;
    }
    case ElementType::Int16: {
      std::vector<float> data(dims.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        std::int16_t v;
        std::memcpy(&v, bytes.data() + 2 * i, 2);
        data[i] = static_cast<float>(v);
      }
      result.image = Volume(dims, std::move(data), spacing, origin);
      break;
    }
    case ElementType::Float32: {
      std::vector<float> data(dims.size());
      std::memcpy(data.data(), bytes.data(), bytes.size());
      result.image = Volume(dims, std::move(data), spacing, origin);
      break;
    }
  }
  return result;
}

/// Reads any supported file as intensities (uint8 data is widened).
inline Volume read_volume(const std::filesystem::path& mhd) {
  MetaImage m = read_metaimage(mhd);
  if (auto* v = std::get_if<Volume>(&m.image)) return std::move(*v);
  const LabelMask& l = m.labels();
  std::vector<float> data(l.data().begin(), l.data().end());
  return Volume(l.dims(), std::move(data), l.spacing(), l.origin());
}

inline LabelMask read_label_mask(const std::filesystem::path& mhd) {
  MetaImage m = read_metaimage(mhd);
  auto* l = std::get_if<LabelMask>(&m.image);
  if (!l) fail(ErrorKind::UnsupportedElementType, "label masks must be stored as MET_UCHAR");
  if (!labels_valid(*l)) fail(ErrorKind::InvalidLabel, "label mask holds values outside 0..5");
  return std::move(*l);
}

/// Int16 output rounds to nearest and saturates; Float32 output is exact.
inline void write_metaimage(const Volume& v, const std::filesystem::path& mhd, ElementType type = ElementType::Float32) {
  detail::write_header(mhd, v.dims(), v.spacing(), v.origin(), type);
  switch (type) {
    case ElementType::Float32:
      detail::write_raw(mhd, v.data().data(), v.size() * sizeof(float));
      break;
    case ElementType::Int16: {
      std::vector<std::int16_t> out(v.size());
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::int16_t>(std::clamp(std::lround(v[i]), -32768L, 32767L));
      detail::write_raw(mhd, out.data(), out.size() * 2);
      break;
    }
    case ElementType::UInt8: {
      std::vector<std::uint8_t> out(v.size());
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v[i]), 0L, 255L));
      detail::write_raw(mhd, out.data(), out.size());
      break;
    }
  }
}

inline void write_metaimage(const LabelMask& m, const std::filesystem::path& mhd) {
  if (!labels_valid(m)) fail(ErrorKind::InvalidLabel, "label mask holds values outside 0..5");
  detail::write_header(mhd, m.dims(), m.spacing(), m.origin(), ElementType::UInt8);
  detail::write_raw(mhd, m.data().data(), m.size());
}

inline void write_metaimage(const BinaryMask& m, const std::filesystem::path& mhd) {
  for (auto v : m.data())
    if (v > 1) fail(ErrorKind::InvalidLabel, "binary mask holds values other than 0/1");
  detail::write_header(mhd, m.dims(), m.spacing(), m.origin(), ElementType::UInt8);
  detail::write_raw(mhd, m.data().data(), m.size());
}

}  // namespace lobekit
