#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "lobekit/volume.hpp"

namespace lobekit {

struct ClassCounts {
  std::uint64_t predicted = 0;     // |P_c|
  std::uint64_t truth = 0;         // |G_c|
  std::uint64_t intersection = 0;  // |P_c ∩ G_c|
};

/// Per-lobe dice (index 0 = RU ... 4 = LL) and their unweighted mean.
struct DiceReport {
  std::array<double, 5> per_class{};
  double average = 0.0;
  std::array<ClassCounts, 5> counts{};
};

inline double dice_from_counts(const ClassCounts& c) {
  if (c.predicted + c.truth == 0) return 1.0;
  return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.predicted + c.truth);
}

inline ClassCounts class_counts(const LabelMask& p, const LabelMask& g, int c) {
  if (!(p.dims() == g.dims())) fail(ErrorKind::ShapeMismatch, "prediction and ground truth dims differ");
  ClassCounts out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool in_p = p[i] == c, in_g = g[i] == c;
    out.predicted += in_p;
    out.truth += in_g;
    out.intersection += in_p && in_g;
  }
  return out;
}

/// 2|P_c ∩ G_c| / (|P_c| + |G_c|); 1.0 when the class is absent from both.
inline double dice_per_class(const LabelMask& p, const LabelMask& g, int c) { return dice_from_counts(class_counts(p, g, c)); }

inline DiceReport dice_average(const LabelMask& p, const LabelMask& g) {
  if (!(p.dims() == g.dims())) fail(ErrorKind::ShapeMismatch, "prediction and ground truth dims differ");
  DiceReport r;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int pc = p[i], gc = g[i];
    if (pc >= 1 && pc <= 5) ++r.counts[pc - 1].predicted;
    if (gc >= 1 && gc <= 5) ++r.counts[gc - 1].truth;
    if (pc == gc && pc >= 1 && pc <= 5) ++r.counts[pc - 1].intersection;
  }
  double total = 0.0;
  for (int c = 0; c < 5; ++c) {
    r.per_class[c] = dice_from_counts(r.counts[c]);
    total += r.per_class[c];
  }
  r.average = total / 5.0;
  return r;
}

inline nlohmann::json to_json(const DiceReport& r) {
  nlohmann::json per_class, counts;
  for (int c = 0; c < 5; ++c) {
    per_class[kLobeNames[c]] = r.per_class[c];
    counts[kLobeNames[c]] = {{"predicted", r.counts[c].predicted},
                             {"truth", r.counts[c].truth},
                             {"intersection", r.counts[c].intersection}};
  }
  return {{"per_class", per_class}, {"average", r.average}, {"counts", counts}};
}

/// Fixed-width table with columns RU RM RL LU LL AVG, values in percent.
inline std::string dice_table(const std::vector<std::pair<std::string, DiceReport>>& rows) {
  std::size_t label_width = 6;
  for (const auto& [name, _] : rows) label_width = std::max(label_width, name.size() + 2);
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(label_width)) << "";
  for (const char* name : kLobeNames) out << std::right << std::setw(8) << name;
  out << std::setw(8) << "AVG" << "\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(label_width)) << name << std::right;
    for (double v : r.per_class) out << std::setw(8) << 100.0 * v;
    out << std::setw(8) << 100.0 * r.average << "\n";
  }
  return out.str();
}

}  // namespace lobekit
