#pragma once

// One-downsampling residual V-Net:
//
//   stem conv(1->C) | res(C) ----------------------------+
//                   | down(C->2C) | res(2C) | up(2C->C) | concat -> fuse 1x1(2C->C) | res(C) | 1x1(C->6) | softmax
//
// Every conv (except the 1x1 head) is followed by ReLU then batchnorm.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "lobekit/layers.hpp"
#include "lobekit/random.hpp"
#include "lobekit/volume.hpp"

namespace lobekit {

struct LobeNetSpec {
  int in_channels = 1;
  int num_classes = kNumClasses;
  int base_width = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (in_channels < 1 || num_classes < 2 || base_width < 1) fail(ErrorKind::InvalidConfig, "invalid network spec");
  }
};

template <typename T>
class LobeNet {
 public:
  using Tensor = ad::Tensor<T>;

  struct Conv {
    Tensor weight;
    Tensor bias;
    int fan_in = 1;
  };
  struct Norm {
    Tensor gamma;
    Tensor beta;
    ad::BatchNormStats<T> stats;
  };
  struct ConvNorm {
    Conv conv;
    Norm norm;
  };
  struct ResBlock {
    ConvNorm first;
    ConvNorm second;
  };

  explicit LobeNet(LobeNetSpec spec = {}) : spec_(spec) {
    spec_.validate();
    const int c = spec_.base_width;
    stem_ = conv_norm(spec_.in_channels, c, 3);
    enc_ = res_block(c);
    down_ = conv_norm(c, 2 * c, 2);
    mid_ = res_block(2 * c);
    up_.conv.weight = Tensor::zeros({2 * c, c, 2, 2, 2}, true);
    up_.conv.bias = Tensor::zeros({c}, true);
    up_.conv.fan_in = 2 * c;
    up_.norm = norm(c);
    fuse_ = conv_norm(2 * c, c, 1);
    dec_ = res_block(c);
    head_.weight = Tensor::zeros({spec_.num_classes, c, 1, 1, 1}, true);
    head_.bias = Tensor::zeros({spec_.num_classes}, true);
    head_.fan_in = c;
    init_parameters(spec_.seed);
  }

  const LobeNetSpec& spec() const { return spec_; }
  void set_mode(ad::Mode m) { mode_ = m; }
  ad::Mode mode() const { return mode_; }

  /// He-uniform conv kernels (bound sqrt(6 / fan_in)), zero biases, gamma 1,
  /// beta 0, running stats reset. Parameters are drawn in declaration order.
  void init_parameters(std::uint64_t seed) {
    Rng rng(seed);
    for_each_conv([&](const std::string&, Conv& conv) {
      const double bound = std::sqrt(6.0 / conv.fan_in);
      for (auto& v : conv.weight.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
      std::fill(conv.bias.storage().begin(), conv.bias.storage().end(), T(0));
      conv.weight.zero_grad();
      conv.bias.zero_grad();
    });
    for_each_norm([](const std::string&, Norm& n) {
      std::fill(n.gamma.storage().begin(), n.gamma.storage().end(), T(1));
      std::fill(n.beta.storage().begin(), n.beta.storage().end(), T(0));
      n.gamma.zero_grad();
      n.beta.zero_grad();
      n.stats = ad::BatchNormStats<T>(static_cast<int>(n.gamma.numel()));
    });
  }

  /// Pre-softmax class scores, [N, num_classes, Z, Y, X].
  Tensor logits(const Tensor& x) {
    if (x.shape().size() != 5 || x.dim(1) != spec_.in_channels)
      fail(ErrorKind::ShapeMismatch, "LobeNet expects [N," + std::to_string(spec_.in_channels) + ",Z,Y,X], got " +
                                         ad::shape_str(x.shape()));
    for (int a = 2; a < 5; ++a)
      if (x.dim(a) % 2) fail(ErrorKind::OddSpatialDim, "LobeNet needs even spatial dims, got " + ad::shape_str(x.shape()));
    Tensor skip = apply_res(enc_, apply(stem_, x, 1, 1));
    Tensor deep = apply_res(mid_, normed(down_, ad::downsample(skip, down_.conv.weight, down_.conv.bias)));
    Tensor up = normed(up_, ad::upsample(deep, up_.conv.weight, up_.conv.bias));
    Tensor fused = apply(fuse_, ad::concat_channels(skip, up), 1, 0);
    Tensor features = apply_res(dec_, fused);
    return ad::conv3d(features, head_.weight, head_.bias, 1, 0);
  }

  /// Per-voxel class probabilities.
  Tensor forward(const Tensor& x) { return ad::softmax_channels(logits(x)); }

  struct Named {
    std::string name;
    Tensor tensor;
  };

  /// Trainable tensors in a fixed order.
  std::vector<Named> parameters() {
    std::vector<Named> out;
    for_each_conv([&](const std::string& name, Conv& c) {
      out.push_back({name + ".weight", c.weight});
      out.push_back({name + ".bias", c.bias});
    });
    for_each_norm([&](const std::string& name, Norm& n) {
      out.push_back({name + ".gamma", n.gamma});
      out.push_back({name + ".beta", n.beta});
    });
    return out;
  }

  /// Batchnorm running statistics keyed by layer name.
  std::vector<std::pair<std::string, ad::BatchNormStats<T>*>> running_stats() {
    std::vector<std::pair<std::string, ad::BatchNormStats<T>*>> out;
    for_each_norm([&](const std::string& name, Norm& n) { out.emplace_back(name, &n.stats); });
    return out;
  }

  Conv& head() { return head_; }

  template <typename F>
  void for_each_conv(F&& f) {
    f("stem.conv", stem_.conv);
    f("enc.0.conv", enc_.first.conv);
    f("enc.1.conv", enc_.second.conv);
    f("down.conv", down_.conv);
    f("mid.0.conv", mid_.first.conv);
    f("mid.1.conv", mid_.second.conv);
    f("up.conv", up_.conv);
    f("fuse.conv", fuse_.conv);
    f("dec.0.conv", dec_.first.conv);
    f("dec.1.conv", dec_.second.conv);
    f("head.conv", head_);
  }

  template <typename F>
  void for_each_norm(F&& f) {
    f("stem.bn", stem_.norm);
    f("enc.0.bn", enc_.first.norm);
    f("enc.1.bn", enc_.second.norm);
    f("down.bn", down_.norm);
    f("mid.0.bn", mid_.first.norm);
    f("mid.1.bn", mid_.second.norm);
    f("up.bn", up_.norm);
    f("fuse.bn", fuse_.norm);
    f("dec.0.bn", dec_.first.norm);
    f("dec.1.bn", dec_.second.norm);
  }

 private:
  static Norm norm(int c) {
    return {Tensor::full({c}, T(1), true), Tensor::zeros({c}, true), ad::BatchNormStats<T>(c)};
  }
  static ConvNorm conv_norm(int cin, int cout, int k) {
    ConvNorm cn;
    cn.conv.weight = Tensor::zeros({cout, cin, k, k, k}, true);
    cn.conv.bias = Tensor::zeros({cout}, true);
    cn.conv.fan_in = cin * k * k * k;
    cn.norm = norm(cout);
    return cn;
  }
  static ResBlock res_block(int c) { return {conv_norm(c, c, 3), conv_norm(c, c, 3)}; }

  Tensor normed(ConvNorm& cn, const Tensor& pre) {
    return ad::batchnorm3d(ad::relu(pre), cn.norm.gamma, cn.norm.beta, cn.norm.stats, mode_);
  }
  Tensor apply(ConvNorm& cn, const Tensor& x, int stride, int pad) {
    return normed(cn, ad::conv3d(x, cn.conv.weight, cn.conv.bias, stride, pad));
  }
  Tensor apply_res(ResBlock& b, const Tensor& x) {
    return ad::residual_add(x, apply(b.second, apply(b.first, x, 1, 1), 1, 1));
  }

  LobeNetSpec spec_;
  ad::Mode mode_ = ad::Mode::Train;
  ConvNorm stem_;
  ResBlock enc_;
  ConvNorm down_;
  ResBlock mid_;
  ConvNorm up_;
  ConvNorm fuse_;
  ResBlock dec_;
  Conv head_;
};

}  // namespace lobekit
