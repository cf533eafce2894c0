#pragma once

// Hybrid segmentation objective: soft dice plus focal loss.

#include <cmath>

#include "lobekit/tensor.hpp"
#include "lobekit/volume.hpp"

namespace lobekit {

struct LossConfig {
  double lambda = 1.0;
  std::vector<double> alpha = std::vector<double>(kNumClasses, 1.0);
  double gamma = 2.0;
  double prob_floor = 1e-7;
  double dice_smooth = 1e-5;

  void validate(int classes) const {
    if (!(lambda >= 0.0)) fail(ErrorKind::InvalidConfig, "lambda must be >= 0");
    if (!(gamma >= 0.0)) fail(ErrorKind::InvalidConfig, "gamma must be >= 0");
    if (!(prob_floor > 0.0) || !(dice_smooth > 0.0)) fail(ErrorKind::InvalidConfig, "loss floors must be > 0");
    if (alpha.size() != static_cast<std::size_t>(classes)) fail(ErrorKind::InvalidConfig, "alpha needs one weight per class");
    for (double a : alpha)
      if (!(a > 0.0)) fail(ErrorKind::InvalidConfig, "alpha weights must be > 0");
  }
};

namespace detail {

template <typename T>
void check_prob_pair(const ad::Tensor<T>& p, const ad::Tensor<T>& g, const char* op) {
  if (p.shape() != g.shape())
    fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + ad::shape_str(p.shape()) + " vs " + ad::shape_str(g.shape()));
  if (p.shape().size() < 2) fail(ErrorKind::ShapeMismatch, std::string(op) + " needs [N,C,...] inputs");
}

}  // namespace detail

/// [1, 6, Z, Y, X] indicator tensor of a label mask.
template <typename T>
ad::Tensor<T> one_hot(const LabelMask& m, int classes = kNumClasses) {
  const std::size_t sv = m.size();
  std::vector<T> g(static_cast<std::size_t>(classes) * sv, T(0));
  for (std::size_t i = 0; i < sv; ++i) {
    if (m[i] >= classes) fail(ErrorKind::InvalidLabel, "label " + std::to_string(m[i]) + " outside class range");
    g[static_cast<std::size_t>(m[i]) * sv + i] = T(1);
  }
  return ad::Tensor<T>::from({1, classes, m.dims().z, m.dims().y, m.dims().x}, std::move(g));
}

/// Sum over classes of 1 - s_c with
///   s_c = (sum_i p g + eps) / (sum_i [p g + (1-p) g + p (1-g)] + eps),
/// numerator and denominator aggregated over every voxel of the batch.
template <typename T>
ad::Tensor<T> dice_loss(const ad::Tensor<T>& p, const ad::Tensor<T>& g, const LossConfig& cfg = {}) {
  detail::check_prob_pair(p, g, "dice_loss");
  const int n_batch = p.dim(0), classes = p.dim(1);
  const std::size_t sv = p.numel() / (static_cast<std::size_t>(n_batch) * classes);
  const T eps = static_cast<T>(cfg.dice_smooth);
  std::vector<T> num(classes, T(0)), den(classes, T(0));
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < classes; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * classes + c) * sv;
      for (std::size_t i = 0; i < sv; ++i) {
        const T pv = p.data()[base + i], gv = g.data()[base + i];
        num[c] += pv * gv;
        den[c] += pv * gv + (T(1) - pv) * gv + pv * (T(1) - gv);
      }
    }
  T loss = T(0);
  for (int c = 0; c < classes; ++c) loss += T(1) - (num[c] + eps) / (den[c] + eps);
  return ad::make_result<T>("dice_loss", {1}, {loss}, {p, g}, [=](ad::Node<T>& self) {
    auto& pn = *self.inputs[0];
    if (!pn.requires_grad) return;
    const auto& gd = self.inputs[1]->data;
    auto& dp = pn.grad_buffer();
    const T up = self.grad[0];
    for (int n = 0; n < n_batch; ++n)
      for (int c = 0; c < classes; ++c) {
        const T a = num[c] + eps, b = den[c] + eps;
        const std::size_t base = (static_cast<std::size_t>(n) * classes + c) * sv;
        // d(num)/dp = g, d(den)/dp = 1 - g
        for (std::size_t i = 0; i < sv; ++i) {
          const T gv = gd[base + i];
          dp[base + i] -= up * (gv * b - a * (T(1) - gv)) / (b * b);
        }
      }
  });
}

/// -(1/N) sum_c sum_i alpha_c g (1-p)^gamma log(max(p, floor)), N = voxels in the batch.
template <typename T>
ad::Tensor<T> focal_loss(const ad::Tensor<T>& p, const ad::Tensor<T>& g, const LossConfig& cfg = {}) {
  detail::check_prob_pair(p, g, "focal_loss");
  const int n_batch = p.dim(0), classes = p.dim(1);
  if (cfg.alpha.size() != static_cast<std::size_t>(classes))
    fail(ErrorKind::ShapeMismatch, "focal_loss: alpha has " + std::to_string(cfg.alpha.size()) + " entries for " +
                                       std::to_string(classes) + " classes");
  const std::size_t sv = p.numel() / (static_cast<std::size_t>(n_batch) * classes);
  const T voxels = static_cast<T>(static_cast<std::size_t>(n_batch) * sv);
  const T gamma = static_cast<T>(cfg.gamma), floor = static_cast<T>(cfg.prob_floor);
  T acc = T(0);
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < classes; ++c) {
      const T alpha = static_cast<T>(cfg.alpha[c]);
      const std::size_t base = (static_cast<std::size_t>(n) * classes + c) * sv;
      for (std::size_t i = 0; i < sv; ++i) {
        const T gv = g.data()[base + i];
        if (gv == T(0)) continue;
        const T pv = p.data()[base + i];
        acc += alpha * gv * std::pow(T(1) - pv, gamma) * std::log(std::max(pv, floor));
      }
    }
  return ad::make_result<T>("focal_loss", {1}, {-acc / voxels}, {p, g}, [=](ad::Node<T>& self) {
    auto& pn = *self.inputs[0];
    if (!pn.requires_grad) return;
    const auto& gd = self.inputs[1]->data;
    auto& dp = pn.grad_buffer();
    const T up = self.grad[0] / voxels;
    for (int n = 0; n < n_batch; ++n)
      for (int c = 0; c < classes; ++c) {
        const T alpha = static_cast<T>(cfg.alpha[c]);
        const std::size_t base = (static_cast<std::size_t>(n) * classes + c) * sv;
        for (std::size_t i = 0; i < sv; ++i) {
          const T gv = gd[base + i];
          if (gv == T(0)) continue;
          const T pv = pn.data[base + i];
          const T q = T(1) - pv;
          const T logp = std::log(std::max(pv, floor));
          const T dmod = gamma == T(0) ? T(0) : -gamma * std::pow(q, gamma - T(1));
          const T dlog = pv > floor ? T(1) / pv : T(0);
          dp[base + i] -= up * alpha * gv * (dmod * logp + std::pow(q, gamma) * dlog);
        }
      }
  });
}

template <typename T>
ad::Tensor<T> hybrid_loss(const ad::Tensor<T>& p, const ad::Tensor<T>& g, const LossConfig& cfg = {}) {
  ad::Tensor<T> dice = dice_loss(p, g, cfg);
  if (cfg.lambda == 0.0) return dice;
  return ad::add(dice, ad::scale(focal_loss(p, g, cfg), static_cast<T>(cfg.lambda)), "hybrid_loss");
}

}  // namespace lobekit
