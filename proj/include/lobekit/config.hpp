#pragma once

// Run configuration (JSON). Every section and key is optional; missing keys
// keep their defaults. Type errors and out-of-range values raise InvalidConfig.
//
// {
//   "mode": "DL+FL+CH",                       // "DL" | "DL+FL" | "DL+FL+CH"
//   "network":    {"base_width": 16, "num_classes": 6, "seed": 0},
//   "preprocess": {"hu_lo": -1000, "hu_hi": 600, "close_kernel": 3,
//                  "dilate_kernel": 5, "min_component_voxels": null},
//   "train": {"epochs": 300, "batch_size": 1, "learning_rate": 1e-3,
//             "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
//             "seed": 0, "patch": null,
//             "loss":    {"lambda": 1, "gamma": 2, "alpha": [1,1,1,1,1,1],
//                         "prob_floor": 1e-7, "dice_smooth": 1e-5},
//             "augment": {"shift_max": 8, "flip_z_prob": 0.5,
//                         "rotate_max_deg": 10, "seed": 0}},
//   "split": {"train_fraction": 0.8, "seed": 0}
// }

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lobekit/preprocess.hpp"
#include "lobekit/trainer.hpp"

namespace lobekit {

enum class AblationMode { Dice, DiceFocal, DiceFocalHull };

inline std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::Dice: return "DL";
    case AblationMode::DiceFocal: return "DL+FL";
    case AblationMode::DiceFocalHull: return "DL+FL+CH";
  }
  return "DL+FL+CH";
}

inline AblationMode parse_mode(const std::string& s) {
  if (s == "DL") return AblationMode::Dice;
  if (s == "DL+FL") return AblationMode::DiceFocal;
  if (s == "DL+FL+CH") return AblationMode::DiceFocalHull;
  fail(ErrorKind::InvalidConfig, "unknown mode '" + s + "' (expected DL, DL+FL or DL+FL+CH)");
}

struct SplitConfig {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct RunConfig {
  AblationMode mode = AblationMode::DiceFocalHull;
  LobeNetSpec network;
  PreprocessConfig preprocess;
  TrainConfig train;
  SplitConfig split;

  bool hull_crop() const { return mode == AblationMode::DiceFocalHull; }

  /// Applies the mode's invariants: DL forces lambda = 0, the other modes lambda = 1.
  void apply_mode() {
    train.loss.lambda = mode == AblationMode::Dice ? 0.0 : 1.0;
  }

  void validate() const {
    network.validate();
    train.validate();
    if (!(preprocess.hu_lo < preprocess.hu_hi)) fail(ErrorKind::InvalidConfig, "preprocess: hu_lo must be < hu_hi");
    if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0))
      fail(ErrorKind::InvalidConfig, "split.train_fraction must be in (0,1)");
  }
};

namespace detail {

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<V>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("key '") + key + "': " + e.what());
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key) || j[key].is_null()) return empty;
  if (!j[key].is_object()) fail(ErrorKind::InvalidConfig, std::string("section '") + key + "' must be an object");
  return j[key];
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::read_key;
  using detail::section;
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, "run config must be a JSON object");
  RunConfig cfg;
  if (j.contains("mode")) {
    std::string mode;
    read_key(j, "mode", mode);
    cfg.mode = parse_mode(mode);
  }

  const auto& net = section(j, "network");
  read_key(net, "base_width", cfg.network.base_width);
  read_key(net, "num_classes", cfg.network.num_classes);
  read_key(net, "seed", cfg.network.seed);

  const auto& pre = section(j, "preprocess");
  read_key(pre, "hu_lo", cfg.preprocess.hu_lo);
  read_key(pre, "hu_hi", cfg.preprocess.hu_hi);
  int close_side = 3, dilate_side = 5;
  read_key(pre, "close_kernel", close_side);
  read_key(pre, "dilate_kernel", dilate_side);
  try {
    cfg.preprocess.close_kernel = StructuringElement::box(close_side);
    cfg.preprocess.dilate_kernel = StructuringElement::box(dilate_side);
  } catch (const Error& e) {
    fail(ErrorKind::InvalidConfig, std::string("preprocess kernels: ") + e.what());
  }
  if (pre.contains("min_component_voxels") && !pre["min_component_voxels"].is_null()) {
    std::size_t v = 0;
    read_key(pre, "min_component_voxels", v);
    cfg.preprocess.min_component_voxels = v;
  }

  const auto& tr = section(j, "train");
  read_key(tr, "epochs", cfg.train.epochs);
  read_key(tr, "batch_size", cfg.train.batch_size);
  read_key(tr, "learning_rate", cfg.train.learning_rate);
  read_key(tr, "adam_beta1", cfg.train.adam_beta1);
  read_key(tr, "adam_beta2", cfg.train.adam_beta2);
  read_key(tr, "adam_eps", cfg.train.adam_eps);
  read_key(tr, "seed", cfg.train.seed);
  if (tr.contains("patch") && !tr["patch"].is_null()) {
    std::array<int, 3> patch{};
    read_key(tr, "patch", patch);
    cfg.train.patch = patch;
  }
  const auto& loss = section(tr, "loss");
  read_key(loss, "lambda", cfg.train.loss.lambda);
  read_key(loss, "gamma", cfg.train.loss.gamma);
  read_key(loss, "prob_floor", cfg.train.loss.prob_floor);
  read_key(loss, "dice_smooth", cfg.train.loss.dice_smooth);
  if (loss.contains("alpha") && loss["alpha"].is_number()) {
    cfg.train.loss.alpha.assign(kNumClasses, loss["alpha"].get<double>());
  } else {
    read_key(loss, "alpha", cfg.train.loss.alpha);
  }
  const auto& aug = section(tr, "augment");
  read_key(aug, "shift_max", cfg.train.augment.shift_max);
  read_key(aug, "flip_z_prob", cfg.train.augment.flip_z_prob);
  read_key(aug, "rotate_max_deg", cfg.train.augment.rotate_max_deg);
  read_key(aug, "seed", cfg.train.augment.seed);

  const auto& split = section(j, "split");
  read_key(split, "train_fraction", cfg.split.train_fraction);
  read_key(split, "seed", cfg.split.seed);

  // An explicit lambda in a DL+FL / DL+FL+CH config wins; DL always pins lambda to 0.
  if (cfg.mode == AblationMode::Dice) cfg.train.loss.lambda = 0.0;
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidConfig, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  nlohmann::json patch = nullptr;
  if (t.patch) patch = *t.patch;
  nlohmann::json min_vox = nullptr;
  if (cfg.preprocess.min_component_voxels) min_vox = *cfg.preprocess.min_component_voxels;
  return {
      {"mode", to_string(cfg.mode)},
      {"network", {{"base_width", cfg.network.base_width}, {"num_classes", cfg.network.num_classes}, {"seed", cfg.network.seed}}},
      {"preprocess",
       {{"hu_lo", cfg.preprocess.hu_lo},
        {"hu_hi", cfg.preprocess.hu_hi},
        {"close_kernel", cfg.preprocess.close_kernel.height()},
        {"dilate_kernel", cfg.preprocess.dilate_kernel.height()},
        {"min_component_voxels", min_vox}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"seed", t.seed},
        {"patch", patch},
        {"loss",
         {{"lambda", t.loss.lambda},
          {"gamma", t.loss.gamma},
          {"alpha", t.loss.alpha},
          {"prob_floor", t.loss.prob_floor},
          {"dice_smooth", t.loss.dice_smooth}}},
        {"augment",
         {{"shift_max", t.augment.shift_max},
          {"flip_z_prob", t.augment.flip_z_prob},
          {"rotate_max_deg", t.augment.rotate_max_deg},
          {"seed", t.augment.seed}}}}},
      {"split", {{"train_fraction", cfg.split.train_fraction}, {"seed", cfg.split.seed}}},
  };
}

}  // namespace lobekit
