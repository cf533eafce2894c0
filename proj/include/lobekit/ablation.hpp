#pragma once

// Step-wise comparison of dice-only, hybrid, and hybrid + hull-crop training.

#include "lobekit/config.hpp"
#include "lobekit/dataset.hpp"
#include "lobekit/metrics.hpp"

namespace lobekit {

struct ArmResult {
  AblationMode mode;
  double lambda = 0.0;
  bool hull_crop = false;
  DiceReport test;                      // per-class mean over test samples
  std::vector<DiceReport> per_sample;
  std::vector<EpochRecord> history;
  std::uint64_t order_hash = 0;
  std::uint64_t parameter_hash = 0;
  std::vector<std::string> train_ids;
};

struct AblationReport {
  std::vector<ArmResult> arms;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

inline DiceReport mean_report(const std::vector<DiceReport>& reports) {
  DiceReport r;
  if (reports.empty()) return r;
  for (const auto& s : reports)
    for (int c = 0; c < 5; ++c) {
      r.per_class[c] += s.per_class[c] / static_cast<double>(reports.size());
      r.counts[c].predicted += s.counts[c].predicted;
      r.counts[c].truth += s.counts[c].truth;
      r.counts[c].intersection += s.counts[c].intersection;
    }
  double total = 0.0;
  for (double v : r.per_class) total += v;
  r.average = total / 5.0;
  return r;
}

/// Trains and evaluates one configuration. Test masks are compared on the raw grid.
inline ArmResult run_arm(const std::vector<RawSample>& train_set, const std::vector<RawSample>& test_set, RunConfig cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.apply_mode();
  ArmResult arm;
  arm.mode = cfg.mode;
  arm.lambda = cfg.train.loss.lambda;
  arm.hull_crop = cfg.hull_crop();
  std::vector<TrainingSample> samples;
  for (const auto& raw : train_set) {
    samples.push_back(prepare_sample(raw, arm.hull_crop, cfg.preprocess).sample);
    arm.train_ids.push_back(raw.id);
  }
  TrainResult tr = train(samples, cfg.train, cfg.network, on_epoch);
  arm.history = tr.history;
  arm.order_hash = tr.order_hash;
  arm.parameter_hash = parameter_hash(tr.net);
  for (const auto& raw : test_set)
    arm.per_sample.push_back(dice_average(segment(tr.net, raw.hu, arm.hull_crop, cfg.preprocess), raw.labels));
  arm.test = mean_report(arm.per_sample);
  return arm;
}

using ArmCallback = std::function<void(AblationMode, const EpochRecord&)>;

inline AblationReport run_ablation(const std::vector<RawSample>& data, const RunConfig& base,
                                   const ArmCallback& on_epoch = {}) {
  if (data.size() < 2) fail(ErrorKind::EmptyDataset, "ablation needs at least two samples");
  const auto [tr_idx, te_idx] = split_indices(data.size(), base.split.train_fraction, base.split.seed);
  AblationReport report;
  std::vector<RawSample> train_set, test_set;
  for (auto i : tr_idx) {
    train_set.push_back(data[i]);
    report.train_ids.push_back(data[i].id);
  }
  for (auto i : te_idx) {
    test_set.push_back(data[i]);
    report.test_ids.push_back(data[i].id);
  }
  for (AblationMode mode : {AblationMode::Dice, AblationMode::DiceFocal, AblationMode::DiceFocalHull}) {
    RunConfig cfg = base;
    cfg.mode = mode;
    EpochCallback cb;
    if (on_epoch) cb = [&, mode](const EpochRecord& r) { on_epoch(mode, r); };
    report.arms.push_back(run_arm(train_set, test_set, cfg, cb));
  }
  return report;
}

inline nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& a : r.arms) {
    arms.push_back({{"mode", to_string(a.mode)},
                    {"lambda", a.lambda},
                    {"hull_crop", a.hull_crop},
                    {"order_hash", a.order_hash},
                    {"parameter_hash", a.parameter_hash},
                    {"final_loss", a.history.empty() ? 0.0 : a.history.back().mean_loss},
                    {"test", to_json(a.test)}});
  }
  return {{"train_ids", r.train_ids}, {"test_ids", r.test_ids}, {"arms", arms}};
}

inline std::string ablation_table(const AblationReport& r) {
  std::vector<std::pair<std::string, DiceReport>> rows;
  for (const auto& a : r.arms) {
    const char* label = a.mode == AblationMode::Dice ? "DL" : (a.mode == AblationMode::DiceFocal ? "+ FL" : "+ CH");
    rows.emplace_back(label, a.test);
  }
  return dice_table(rows);
}

}  // namespace lobekit
