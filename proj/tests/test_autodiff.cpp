#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace lobekit;
using T = ad::Tensor<double>;

TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  for (const auto& r : gradcheck::primitive_suite()) EXPECT_LT(r.error, r.limit) << r.name;
}

TEST(GradCheck, FullNetworkMatchesFiniteDifferences) {
  const auto r = gradcheck::end_to_end(fixtures::tiny_phantom());
  EXPECT_LT(r.result.error, r.result.limit);
  EXPECT_GT(r.coordinates, 400);
}

TEST(Autodiff, BackwardNeedsScalar) {
  T a = T::from({2}, {1.0, 2.0}, true);
  try {
    ad::backward(ad::scale(a, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotScalar);
  }
  EXPECT_THROW(ad::scale(a, 2.0).item(), Error);
}

TEST(Autodiff, BackwardNeedsAGraph) {
  T a = T::from({2}, {1.0, 2.0}, false);
  try {
    ad::backward(ad::sum(a));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DetachedGraph);
  }
  T b = T::from({2}, {1.0, 2.0}, true);
  try {
    ad::backward(ad::sum(b).detach());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DetachedGraph);
  }
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  T a = T::from({1}, {3.0}, true);
  const T sq = ad::mul(a, a);
  ad::backward(ad::sum(ad::add(sq, ad::scale(a, 4.0))));
  EXPECT_DOUBLE_EQ(a.grad()[0], 2 * 3.0 + 4.0);
}

TEST(Autodiff, LeavesAccumulateAcrossBackwardCalls) {
  T a = T::from({1}, {2.0}, true);
  const T loss = ad::sum(ad::mul(a, a));
  ad::backward(loss);
  ad::backward(loss);
  EXPECT_DOUBLE_EQ(a.grad()[0], 8.0);
  a.zero_grad();
  EXPECT_FALSE(a.has_grad());
}

TEST(Autodiff, ShapeMismatchRaises) {
  try {
    ad::add(T::zeros({2}), T::zeros({3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(ad::conv3d(T::zeros({1, 2, 3, 3, 3}), T::zeros({1, 3, 3, 3, 3}), T::zeros({1}), 1, 1), Error);
  EXPECT_THROW(ad::concat_channels(T::zeros({1, 1, 2, 2, 2}), T::zeros({1, 1, 2, 2, 4})), Error);
}

TEST(Layers, DownsampleRejectsOddDims) {
  try {
    ad::downsample(T::zeros({1, 1, 4, 3, 4}), T::zeros({1, 1, 2, 2, 2}), T::zeros({1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OddSpatialDim);
  }
}

TEST(Layers, ConvMatchesDirectSum) {
  Rng rng(4);
  const T x = gradcheck::random_tensor(rng, {1, 2, 3, 4, 5}, -1, 1, false);
  const T w = gradcheck::random_tensor(rng, {3, 2, 3, 3, 3}, -1, 1, false);
  const T b = gradcheck::random_tensor(rng, {3}, -1, 1, false);
  const T y = ad::conv3d(x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), (ad::Shape{1, 3, 3, 4, 5}));
  auto X = [&](int c, int z, int yy, int xx) {
    if (z < 0 || yy < 0 || xx < 0 || z >= 3 || yy >= 4 || xx >= 5) return 0.0;
    return x.data()[((c * 3 + z) * 4 + yy) * 5 + xx];
  };
  for (int o = 0; o < 3; ++o)
    for (int z = 0; z < 3; ++z)
      for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 5; ++xx) {
          double s = b.data()[o];
          for (int c = 0; c < 2; ++c)
            for (int kz = 0; kz < 3; ++kz)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx)
                  s += w.data()[(((o * 2 + c) * 3 + kz) * 3 + ky) * 3 + kx] * X(c, z + kz - 1, yy + ky - 1, xx + kx - 1);
          EXPECT_NEAR(y.data()[((o * 3 + z) * 4 + yy) * 5 + xx], s, 1e-12);
        }
}

TEST(Layers, UpsampleWritesDisjointBlocks) {
  // Single input voxel and channel: output block equals the kernel plus bias.
  const T x = T::from({1, 1, 1, 1, 1}, {2.0});
  std::vector<double> wv(8);
  for (int i = 0; i < 8; ++i) wv[i] = i;
  const T y = ad::upsample(x, T::from({1, 1, 2, 2, 2}, wv), T::from({1}, {0.5}));
  ASSERT_EQ(y.shape(), (ad::Shape{1, 1, 2, 2, 2}));
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y.data()[i], 2.0 * i + 0.5);
}

TEST(Layers, SoftmaxIsStableAndSumsToOne) {
  const T x = T::from({1, 3, 1, 1, 2}, {1000.0, -5.0, 1001.0, 0.0, 999.0, 5.0});
  const T p = ad::softmax_channels(x);
  for (int i = 0; i < 2; ++i) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      EXPECT_TRUE(std::isfinite(p.data()[c * 2 + i]));
      s += p.data()[c * 2 + i];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Layers, BatchNormUpdatesRunningStatsAndUsesThemInEval) {
  ad::BatchNormStats<double> stats(1);
  const T x = T::from({1, 1, 1, 1, 4}, {1.0, 2.0, 3.0, 6.0});
  const T gamma = T::from({1}, {1.0});
  const T beta = T::from({1}, {0.0});
  const T y = ad::batchnorm3d(x, gamma, beta, stats, ad::Mode::Train);
  double mean = 0;
  for (auto v : y.data()) mean += v;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(stats.mean[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(stats.var[0], 0.9 + 0.1 * (14.0 / 3.0), 1e-12);  // unbiased variance 14/3
  const T e = ad::batchnorm3d(x, gamma, beta, stats, ad::Mode::Eval);
  EXPECT_NEAR(e.data()[0], (1.0 - stats.mean[0]) / std::sqrt(stats.var[0]), 1e-12);
}

TEST(Layers, BatchNormConstantChannelMapsToBeta) {
  ad::BatchNormStats<double> stats(1);
  const T y = ad::batchnorm3d(T::full({1, 1, 2, 2, 2}, 7.0), T::from({1}, {3.0}), T::from({1}, {0.25}), stats, ad::Mode::Train);
  for (auto v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Autodiff, FanOutSumsBothConsumers) {
  // y = sum(x^2) + sum(3x): dy/dx = 2x + 3 elementwise.
  T x = T::from({3}, {-1.5, 0.25, 2.0}, true);
  const T sq = ad::mul(x, x), lin = ad::scale(x, 3.0);
  ad::backward(ad::add(ad::sum(sq), ad::sum(lin)));
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i] + 3.0);
}

TEST(Layers, ConvHandCases) {
  Rng rng(3);
  T x = gradcheck::random_tensor(rng, {1, 1, 3, 3, 3}, -1, 1, false);
  T delta = T::zeros({1, 1, 3, 3, 3});
  delta.storage()[13] = 1.0;
  const T same = ad::conv3d(x, delta, T::zeros({1}), 1, 1);
  EXPECT_EQ(same.storage(), x.storage());
  const T zero = ad::conv3d(x, T::zeros({1, 1, 3, 3, 3}), T::zeros({1}), 1, 1);
  for (double v : zero.storage()) EXPECT_EQ(v, 0.0);
  // floor((D + 2p - k) / s) + 1 per axis.
  const T strided = ad::conv3d(gradcheck::random_tensor(rng, {1, 1, 7, 6, 5}, -1, 1, false), T::zeros({2, 1, 3, 3, 3}),
                               T::zeros({2}), 2, 1);
  EXPECT_EQ(strided.shape(), (ad::Shape{1, 2, 4, 3, 3}));
  EXPECT_THROW(ad::conv3d(T::zeros({1, 1, 1, 1, 1}), T::zeros({1, 1, 3, 3, 3}), T::zeros({1}), 1, 0), Error);
}

TEST(Layers, ReluAndResidualHandCases) {
  const T r = ad::relu(T::from({2}, {-2.0, 3.0}));
  EXPECT_EQ(r.storage(), (std::vector<double>{0.0, 3.0}));
  EXPECT_THROW(ad::residual_add(T::zeros({1, 2, 2, 2, 2}), T::zeros({1, 1, 2, 2, 2})), Error);
}

TEST(Layers, UpsampleRestoresDownsampledShape) {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const int z = 2 * rng.integer(1, 5), y = 2 * rng.integer(1, 5), x = 2 * rng.integer(1, 5);
    const T in = gradcheck::random_tensor(rng, {1, 1, z, y, x}, -1, 1, false);
    const T down = ad::downsample(in, gradcheck::random_tensor(rng, {3, 1, 2, 2, 2}), T::zeros({3}));
    EXPECT_EQ(down.shape(), (ad::Shape{1, 3, z / 2, y / 2, x / 2}));
    const T up = ad::upsample(down, gradcheck::random_tensor(rng, {3, 2, 2, 2, 2}), T::zeros({2}));
    EXPECT_EQ(up.shape(), (ad::Shape{1, 2, z, y, x}));
  }
  try {
    ad::downsample(T::zeros({1, 1, 3, 4, 4}), T::zeros({1, 1, 2, 2, 2}), T::zeros({1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OddSpatialDim);
  }
}

TEST(Layers, SoftmaxRowsAreStrictlyInsideTheSimplex) {
  Rng rng(5);
  const T p = ad::softmax_channels(gradcheck::random_tensor(rng, {2, 6, 3, 4, 5}, -8.0, 8.0, false));
  const std::size_t spatial = 3 * 4 * 5;
  for (int n = 0; n < 2; ++n)
    for (std::size_t s = 0; s < spatial; ++s) {
      double total = 0.0;
      for (int c = 0; c < 6; ++c) {
        const double v = p.storage()[(n * 6 + c) * spatial + s];
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  const T uniform = ad::softmax_channels(T::full({1, 6, 1, 1, 1}, 0.3));
  for (double v : uniform.storage()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(Layers, BatchNormTrainingStandardizesEachChannel) {
  Rng rng(6);
  for (int k = 0; k < 20; ++k) {
    const T x = gradcheck::random_tensor(rng, {1, 3, 4, 3, 5}, rng.uniform(-5, 0), rng.uniform(0.5, 5), false);
    ad::BatchNormStats<double> stats(3);
    const T y = ad::batchnorm3d(x, T::full({3}, 1.0), T::zeros({3}), stats, ad::Mode::Train);
    const std::size_t n = 60;
    for (int c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y.storage()[c * n + i] / n;
      for (std::size_t i = 0; i < n; ++i) var += (y.storage()[c * n + i] - mean) * (y.storage()[c * n + i] - mean) / n;
      EXPECT_LT(std::abs(mean), 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}
