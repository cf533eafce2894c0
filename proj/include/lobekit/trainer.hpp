#pragma once

// Adam training loop (batch size one, last-epoch parameters) and whole-volume inference.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "lobekit/augment.hpp"
#include "lobekit/loss.hpp"
#include "lobekit/model.hpp"

namespace lobekit {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 1;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossConfig loss;
  AugmentConfig augment;
  std::optional<std::array<int, 3>> patch;

  void validate() const {
    if (epochs < 1) fail(ErrorKind::InvalidConfig, "epochs must be >= 1");
    if (batch_size != 1) fail(ErrorKind::InvalidConfig, "batch_size is fixed at 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidConfig, "learning_rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0))
      fail(ErrorKind::InvalidConfig, "invalid Adam hyperparameters");
    if (patch)
      for (int p : *patch)
        if (p < 2) fail(ErrorKind::InvalidConfig, "patch sides must be >= 2");
    loss.validate(kNumClasses);
    augment.validate();
  }
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
  std::int64_t step = 0;
};

/// Bias-corrected Adam update in place, then clears every gradient.
template <typename T>
void adam_step(std::vector<ad::Tensor<T>>& params, OptimizerState<T>& state, const TrainConfig& cfg) {
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!params[k].has_grad()) fail(ErrorKind::MissingGradient, "parameter " + std::to_string(k) + " has no gradient");
  if (state.first.size() != params.size()) {
    state.first.assign(params.size(), {});
    state.second.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) {
      state.first[k].assign(params[k].numel(), T(0));
      state.second[k].assign(params[k].numel(), T(0));
    }
  }
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const T c1 = static_cast<T>(1.0 - std::pow(b1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(b2, static_cast<double>(state.step)));
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.adam_eps);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k].data();
    auto grad = params[k].grad();
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (m.size() != value.size()) fail(ErrorKind::ShapeMismatch, "optimizer state does not match parameter");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T g = grad[i];
      m[i] = tb1 * m[i] + (T(1) - tb1) * g;
      v[i] = tb2 * v[i] + (T(1) - tb2) * g * g;
      const T mhat = m[i] / c1, vhat = v[i] / c2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    params[k].zero_grad();
  }
}

/// Training pair; `id` names the source (used for order logging).
struct TrainingSample {
  std::string id;
  Volume volume;  // normalized
  LabelMask labels;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;  // since training start
};

struct TrainResult {
  LobeNet<float> net;
  std::vector<EpochRecord> history;
  std::vector<std::vector<std::size_t>> orders;  // dataset indices visited per epoch
  std::uint64_t order_hash = 0;                  // FNV-1a over visited sample ids
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// FNV-1a over the raw bytes of every parameter and running statistic.
template <typename T>
std::uint64_t parameter_hash(LobeNet<T>& net) {
  std::uint64_t h = 1469598103934665603ULL;
  auto bytes = [&](const auto& v) {
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0])), h);
  };
  for (auto& p : net.parameters()) bytes(p.tensor.storage());
  for (auto& [name, s] : net.running_stats()) {
    bytes(s->mean);
    bytes(s->var);
  }
  return h;
}

/// Zero intensity / background padding at the high end of each axis up to even sides.
inline Sample pad_to_even(const Volume& v, const LabelMask& m) {
  const Dims d = v.dims();
  const Dims p{d.z + d.z % 2, d.y + d.y % 2, d.x + d.x % 2};
  if (p == d) return {v, m};
  Sample out{Volume(p, 0.0f, v.spacing(), v.origin()), LabelMask(p, 0, m.spacing(), m.origin())};
  const CropRegion r{{0, 0, 0}, {d.z, d.y, d.x}};
  paste(out.volume, v, r);
  paste(out.labels, m, r);
  return out;
}

inline ad::Tensor<float> to_input(const Volume& v) {
  return ad::Tensor<float>::from({1, 1, v.dims().z, v.dims().y, v.dims().x}, v.data());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const std::vector<TrainingSample>& dataset, const TrainConfig& cfg, const LobeNetSpec& spec,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) fail(ErrorKind::EmptyDataset, "training set is empty");
  for (const auto& s : dataset)
    if (!(s.volume.dims() == s.labels.dims())) fail(ErrorKind::ShapeMismatch, "sample " + s.id + ": volume/label dims differ");

  TrainResult result{LobeNet<float>(spec), {}, {}, 0};
  LobeNet<float>& net = result.net;
  net.set_mode(ad::Mode::Train);
  std::vector<ad::Tensor<float>> params;
  for (auto& p : net.parameters()) params.push_back(p.tensor);
  OptimizerState<float> state;

  Rng order_rng(cfg.seed);
  Rng aug_rng(cfg.augment.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uint64_t hash = 1469598103934665603ULL;
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.integer(0, static_cast<int>(i) - 1))]);
    result.orders.push_back(order);

    double total = 0.0;
    for (std::size_t idx : order) {
      const TrainingSample& s = dataset[idx];
      hash = fnv1a(s.id, hash);
      Sample aug = augment(s.volume, s.labels, cfg.augment, aug_rng);
      if (cfg.patch) {
        const Dims d = aug.volume.dims();
        const std::array<int, 3> ext{d.z, d.y, d.x};
        CropRegion r;
        for (int a = 0; a < 3; ++a) {
          const int side = std::min((*cfg.patch)[a], ext[a]);
          r.lo[a] = aug_rng.integer(0, ext[a] - side);
          r.hi[a] = r.lo[a] + side;
        }
        aug = {crop(aug.volume, r), crop(aug.labels, r)};
      }
      aug = pad_to_even(aug.volume, aug.labels);

      const auto probs = net.forward(to_input(aug.volume));
      const auto loss = hybrid_loss(probs, one_hot<float>(aug.labels), cfg.loss);
      const double value = loss.item();
      if (!std::isfinite(value))
        fail(ErrorKind::NonFiniteLoss,
             "epoch " + std::to_string(epoch + 1) + ", sample '" + s.id + "' produced loss " + std::to_string(value));
      ad::backward(loss);
      adam_step(params, state, cfg);
      total += value;
    }
    EpochRecord rec{epoch + 1, total / static_cast<double>(dataset.size()),
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.order_hash = hash;
  return result;
}

/// Argmax label per voxel (ties resolve to the lower class) in eval mode.
template <typename T>
LabelMask infer(LobeNet<T>& net, const Volume& v) {
  const ad::Mode previous = net.mode();
  net.set_mode(ad::Mode::Eval);
  const Dims d = v.dims();
  const Sample padded = pad_to_even(v, LabelMask(d, 0));
  const Dims p = padded.volume.dims();
  const auto x = ad::Tensor<T>::from({1, 1, p.z, p.y, p.x}, std::vector<T>(padded.volume.data().begin(), padded.volume.data().end()));
  const auto scores = net.logits(x);
  net.set_mode(previous);

  const int classes = scores.dim(1);
  const std::size_t sv = p.size();
  LabelMask out(d, 0, v.spacing(), v.origin());
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int xx = 0; xx < d.x; ++xx) {
        const std::size_t i = (static_cast<std::size_t>(z) * p.y + y) * p.x + xx;
        int best = 0;
        for (int c = 1; c < classes; ++c)
          if (scores.data()[c * sv + i] > scores.data()[best * sv + i]) best = c;
        out(z, y, xx) = static_cast<std::uint8_t>(best);
      }
  return out;
}

}  // namespace lobekit
