#pragma once

// Volumetric layer primitives on [N, C, Z, Y, X] tensors. Convolutions are
// cross-correlations with zero padding, lowered to GEMM over column chunks.

#include <Eigen/Core>

#include "lobekit/tensor.hpp"

namespace lobekit::ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

inline void require_rank5(const Shape& s, const char* op) {
  if (s.size() != 5) fail(ErrorKind::ShapeMismatch, std::string(op) + " expects [N,C,Z,Y,X], got " + shape_str(s));
}

struct ConvGeometry {
  int n, cin, cout;
  std::array<int, 3> in;   // input spatial
  std::array<int, 3> k;    // kernel
  std::array<int, 3> out;  // output spatial
  int stride, pad;

  std::size_t in_vox() const { return static_cast<std::size_t>(in[0]) * in[1] * in[2]; }
  std::size_t out_vox() const { return static_cast<std::size_t>(out[0]) * out[1] * out[2]; }
  int kvol() const { return k[0] * k[1] * k[2]; }
  int krows() const { return cin * kvol(); }
};

/// Output rows (z, y pairs) per GEMM chunk: about 4096 columns.
inline int rows_per_chunk(const ConvGeometry& g) {
  return std::min(g.out[0] * g.out[1], std::max(1, 4096 / std::max(1, g.out[2])));
}

/// Per-thread buffer reused across calls, so im2col scratch is not mapped
/// and unmapped by the allocator on every layer.
template <typename T, int Slot>
T* scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

/// Lays out the receptive fields of output rows [r0, r1) (row = oz*OY + oy)
/// as columns of `col` (krows x ncols).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, int r0, int r1, T* col) {
  const int ox_n = g.out[2];
  const std::size_t ncols = static_cast<std::size_t>(r1 - r0) * ox_n;
  int row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * g.in_vox();
    for (int dz = 0; dz < g.k[0]; ++dz)
      for (int dy = 0; dy < g.k[1]; ++dy)
        for (int dx = 0; dx < g.k[2]; ++dx, ++row) {
          T* dst = col + static_cast<std::size_t>(row) * ncols;
          for (int r = r0; r < r1; ++r) {
            const int oz = r / g.out[1], oy = r % g.out[1];
            const int iz = oz * g.stride - g.pad + dz, iy = oy * g.stride - g.pad + dy;
            T* d = dst + static_cast<std::size_t>(r - r0) * ox_n;
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
              std::fill(d, d + ox_n, T(0));
              continue;
            }
            const T* src = xc + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
            for (int ox = 0; ox < ox_n; ++ox) {
              const int ix = ox * g.stride - g.pad + dx;
              d[ox] = (ix >= 0 && ix < g.in[2]) ? src[ix] : T(0);
            }
          }
        }
  }
}

/// Adjoint of im2col: scatter-adds columns back into dx.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, int r0, int r1, T* dx) {
  const int ox_n = g.out[2];
  const std::size_t ncols = static_cast<std::size_t>(r1 - r0) * ox_n;
  int row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    T* xc = dx + static_cast<std::size_t>(ci) * g.in_vox();
    for (int dz = 0; dz < g.k[0]; ++dz)
      for (int dy = 0; dy < g.k[1]; ++dy)
        for (int dx_ = 0; dx_ < g.k[2]; ++dx_, ++row) {
          const T* srcrow = col + static_cast<std::size_t>(row) * ncols;
          for (int r = r0; r < r1; ++r) {
            const int oz = r / g.out[1], oy = r % g.out[1];
            const int iz = oz * g.stride - g.pad + dz, iy = oy * g.stride - g.pad + dy;
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) continue;
            const T* s = srcrow + static_cast<std::size_t>(r - r0) * ox_n;
            T* d = xc + (static_cast<std::size_t>(iz) * g.in[1] + iy) * g.in[2];
            for (int ox = 0; ox < ox_n; ++ox) {
              const int ix = ox * g.stride - g.pad + dx_;
              if (ix >= 0 && ix < g.in[2]) d[ix] += s[ox];
            }
          }
        }
  }
}

template <typename T>
Tensor<T> conv3d_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad, std::string op) {
  require_rank5(x.shape(), "conv3d");
  require_rank5(w.shape(), "conv3d weight");
  if (stride < 1 || pad < 0) fail(ErrorKind::ShapeMismatch, "conv3d: stride must be >= 1 and padding >= 0");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.cout = w.dim(0);
  g.stride = stride;
  g.pad = pad;
  if (w.dim(1) != g.cin)
    fail(ErrorKind::ShapeMismatch, "conv3d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                                       std::to_string(g.cin));
  if (b.defined() && (b.shape().size() != 1 || b.dim(0) != g.cout))
    fail(ErrorKind::ShapeMismatch, "conv3d: bias must have one entry per output channel");
  for (int a = 0; a < 3; ++a) {
    g.in[a] = x.dim(2 + a);
    g.k[a] = w.dim(2 + a);
    if (g.in[a] + 2 * pad < g.k[a]) fail(ErrorKind::ShapeMismatch, "conv3d: padded input smaller than kernel");
    g.out[a] = (g.in[a] + 2 * pad - g.k[a]) / stride + 1;
  }

  const std::size_t ov = g.out_vox();
  const int K = g.krows();
  std::vector<T> out(static_cast<std::size_t>(g.n) * g.cout * ov);
  const int rows_total = g.out[0] * g.out[1];
  const int chunk_rows = rows_per_chunk(g);
  T* col = scratch<T, 0>(static_cast<std::size_t>(K) * chunk_rows * g.out[2]);
  Eigen::Map<const RowMat<T>> W(w.data().data(), g.cout, K);

  for (int n = 0; n < g.n; ++n) {
    const T* xn = x.data().data() + static_cast<std::size_t>(n) * g.cin * g.in_vox();
    T* yn = out.data() + static_cast<std::size_t>(n) * g.cout * ov;
    for (int r0 = 0; r0 < rows_total; r0 += chunk_rows) {
      const int r1 = std::min(rows_total, r0 + chunk_rows);
      const Eigen::Index nc = static_cast<Eigen::Index>(r1 - r0) * g.out[2];
      im2col(xn, g, r0, r1, col);
      Eigen::Map<const RowMat<T>> C(col, K, nc);
      StridedMap<T> Y(yn + static_cast<std::size_t>(r0) * g.out[2], g.cout, nc, Eigen::OuterStride<>(ov));
      Y.noalias() = W * C;
    }
    if (b.defined())
      for (int co = 0; co < g.cout; ++co) {
        T* yc = yn + static_cast<std::size_t>(co) * ov;
        const T bias = b.data()[co];
        for (std::size_t i = 0; i < ov; ++i) yc[i] += bias;
      }
  }

  Shape shape{g.n, g.cout, g.out[0], g.out[1], g.out[2]};
  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result<T>(std::move(op), std::move(shape), std::move(out), std::move(inputs), [g](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    Node<T>* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const std::size_t ov = g.out_vox();
    const int K = g.krows();
    const int rows_total = g.out[0] * g.out[1];
    const int chunk_rows = rows_per_chunk(g);
    const std::size_t col_size = static_cast<std::size_t>(K) * chunk_rows * g.out[2];
    T* col = wn.requires_grad ? scratch<T, 0>(col_size) : nullptr;
    T* dcol = xn.requires_grad ? scratch<T, 1>(col_size) : nullptr;
    Eigen::Map<const RowMat<T>> W(wn.data.data(), g.cout, K);
    T* dw = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
    T* dx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;

    for (int n = 0; n < g.n; ++n) {
      const T* x = xn.data.data() + static_cast<std::size_t>(n) * g.cin * g.in_vox();
      const T* dy = self.grad.data() + static_cast<std::size_t>(n) * g.cout * ov;
      for (int r0 = 0; r0 < rows_total; r0 += chunk_rows) {
        const int r1 = std::min(rows_total, r0 + chunk_rows);
        const Eigen::Index nc = static_cast<Eigen::Index>(r1 - r0) * g.out[2];
        ConstStridedMap<T> dY(dy + static_cast<std::size_t>(r0) * g.out[2], g.cout, nc, Eigen::OuterStride<>(ov));
        if (dw) {
          im2col(x, g, r0, r1, col);
          Eigen::Map<const RowMat<T>> C(col, K, nc);
          Eigen::Map<RowMat<T>> dW(dw, g.cout, K);
          dW.noalias() += dY * C.transpose();
        }
        if (dx) {
          Eigen::Map<RowMat<T>> dC(dcol, K, nc);
          dC.noalias() = W.transpose() * dY;
          col2im(dcol, g, r0, r1, dx + static_cast<std::size_t>(n) * g.cin * g.in_vox());
        }
      }
      if (bn && bn->requires_grad) {
        auto& db = bn->grad_buffer();
        for (int co = 0; co < g.cout; ++co) {
          const T* d = dy + static_cast<std::size_t>(co) * ov;
          T s = T(0);
          for (std::size_t i = 0; i < ov; ++i) s += d[i];
          db[co] += s;
        }
      }
    }
  });
}

}  // namespace detail

/// x [N,Cin,Z,Y,X], w [Cout,Cin,kz,ky,kx], optional b [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1, int padding = 0) {
  return detail::conv3d_impl(x, w, b, stride, padding, "conv3d");
}

/// Learned 2x2x2 stride-2 convolution halving every spatial dim.
template <typename T>
Tensor<T> downsample(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank5(x.shape(), "downsample");
  for (int a = 2; a < 5; ++a)
    if (x.dim(a) % 2) fail(ErrorKind::OddSpatialDim, "downsample needs even spatial dims, got " + shape_str(x.shape()));
  if (w.shape().size() != 5 || w.dim(2) != 2 || w.dim(3) != 2 || w.dim(4) != 2)
    fail(ErrorKind::ShapeMismatch, "downsample kernel must be 2x2x2");
  return detail::conv3d_impl(x, w, b, 2, 0, "downsample");
}

/// Learned 2x2x2 stride-2 transposed convolution doubling every spatial dim.
/// x [N,Cin,Z,Y,X], w [Cin,Cout,2,2,2], optional b [Cout].
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  using detail::RowMat;
  detail::require_rank5(x.shape(), "upsample");
  if (w.shape().size() != 5 || w.dim(0) != x.dim(1) || w.dim(2) != 2 || w.dim(3) != 2 || w.dim(4) != 2)
    fail(ErrorKind::ShapeMismatch, "upsample kernel must be [Cin,Cout,2,2,2]");
  const int n_batch = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  if (b.defined() && (b.shape().size() != 1 || b.dim(0) != cout))
    fail(ErrorKind::ShapeMismatch, "upsample: bias must have one entry per output channel");
  const std::array<int, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const std::array<int, 3> out{2 * in[0], 2 * in[1], 2 * in[2]};
  const std::size_t iv = static_cast<std::size_t>(in[0]) * in[1] * in[2];
  const std::size_t ov = 8 * iv;
  const int rows = cout * 8;

  std::vector<T> y(static_cast<std::size_t>(n_batch) * cout * ov);
  std::vector<T> gbuf(static_cast<std::size_t>(rows) * iv);
  Eigen::Map<const RowMat<T>> W(w.data().data(), cin, rows);
  for (int n = 0; n < n_batch; ++n) {
    Eigen::Map<const RowMat<T>> X(x.data().data() + static_cast<std::size_t>(n) * cin * iv, cin, iv);
    Eigen::Map<RowMat<T>> G(gbuf.data(), rows, iv);
    G.noalias() = W.transpose() * X;
    T* yn = y.data() + static_cast<std::size_t>(n) * cout * ov;
    for (int co = 0; co < cout; ++co) {
      const T bias = b.defined() ? b.data()[co] : T(0);
      for (int k = 0; k < 8; ++k) {
        const int a = k >> 2, bb = (k >> 1) & 1, c = k & 1;
        const T* g = gbuf.data() + static_cast<std::size_t>(co * 8 + k) * iv;
        T* yc = yn + static_cast<std::size_t>(co) * ov;
        std::size_t i = 0;
        for (int z = 0; z < in[0]; ++z)
          for (int yy = 0; yy < in[1]; ++yy) {
            T* row = yc + (static_cast<std::size_t>(2 * z + a) * out[1] + (2 * yy + bb)) * out[2] + c;
            for (int xx = 0; xx < in[2]; ++xx, ++i) row[2 * xx] = g[i] + bias;
          }
      }
    }
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result<T>(
      "upsample", {n_batch, cout, out[0], out[1], out[2]}, std::move(y), std::move(inputs),
      [=](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        Node<T>* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        std::vector<T> dg(static_cast<std::size_t>(rows) * iv);
        Eigen::Map<const RowMat<T>> W(wn.data.data(), cin, rows);
        for (int n = 0; n < n_batch; ++n) {
          const T* dyn = self.grad.data() + static_cast<std::size_t>(n) * cout * ov;
          for (int co = 0; co < cout; ++co) {
            const T* dyc = dyn + static_cast<std::size_t>(co) * ov;
            for (int k = 0; k < 8; ++k) {
              const int a = k >> 2, bb = (k >> 1) & 1, c = k & 1;
              T* g = dg.data() + static_cast<std::size_t>(co * 8 + k) * iv;
              std::size_t i = 0;
              for (int z = 0; z < in[0]; ++z)
                for (int yy = 0; yy < in[1]; ++yy) {
                  const T* row = dyc + (static_cast<std::size_t>(2 * z + a) * out[1] + (2 * yy + bb)) * out[2] + c;
                  for (int xx = 0; xx < in[2]; ++xx, ++i) g[i] = row[2 * xx];
                }
            }
            if (bn && bn->requires_grad) {
              T s = T(0);
              for (std::size_t i = 0; i < ov; ++i) s += dyc[i];
              bn->grad_buffer()[co] += s;
            }
          }
          Eigen::Map<const RowMat<T>> dG(dg.data(), rows, iv);
          Eigen::Map<const RowMat<T>> X(xn.data.data() + static_cast<std::size_t>(n) * cin * iv, cin, iv);
          if (wn.requires_grad) {
            Eigen::Map<RowMat<T>> dW(wn.grad_buffer().data(), cin, rows);
            dW.noalias() += X * dG.transpose();
          }
          if (xn.requires_grad) {
            Eigen::Map<RowMat<T>> dX(xn.grad_buffer().data() + static_cast<std::size_t>(n) * cin * iv, cin, iv);
            dX.noalias() += W * dG;
          }
        }
      });
}

/// Channel-wise concatenation of two [N,C,...] tensors with equal spatial dims.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank5(a.shape(), "concat_channels");
  detail::require_rank5(b.shape(), "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3) || a.dim(4) != b.dim(4))
    fail(ErrorKind::ShapeMismatch, "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n_batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t sv = static_cast<std::size_t>(a.dim(2)) * a.dim(3) * a.dim(4);
  std::vector<T> out(static_cast<std::size_t>(n_batch) * (ca + cb) * sv);
  for (int n = 0; n < n_batch; ++n) {
    T* dst = out.data() + static_cast<std::size_t>(n) * (ca + cb) * sv;
    std::copy_n(a.data().data() + static_cast<std::size_t>(n) * ca * sv, ca * sv, dst);
    std::copy_n(b.data().data() + static_cast<std::size_t>(n) * cb * sv, cb * sv, dst + ca * sv);
  }
  return make_result<T>("concat_channels", {n_batch, ca + cb, a.dim(2), a.dim(3), a.dim(4)}, std::move(out), {a, b},
                        [=](Node<T>& self) {
                          for (int n = 0; n < n_batch; ++n) {
                            const T* src = self.grad.data() + static_cast<std::size_t>(n) * (ca + cb) * sv;
                            if (self.inputs[0]->requires_grad) {
                              T* g = self.inputs[0]->grad_buffer().data() + static_cast<std::size_t>(n) * ca * sv;
                              for (std::size_t i = 0; i < ca * sv; ++i) g[i] += src[i];
                            }
                            if (self.inputs[1]->requires_grad) {
                              T* g = self.inputs[1]->grad_buffer().data() + static_cast<std::size_t>(n) * cb * sv;
                              for (std::size_t i = 0; i < cb * sv; ++i) g[i] += src[ca * sv + i];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Batch normalisation

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Running statistics; not differentiated.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit BatchNormStats(int channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

/// Per-channel normalisation over (N, Z, Y, X). The batch variance is floored
/// at kBatchNormEps before the square root, so constant channels map to 0.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                      Mode mode) {
  detail::require_rank5(x.shape(), "batchnorm3d");
  const int n_batch = x.dim(0), channels = x.dim(1);
  if (gamma.numel() != static_cast<std::size_t>(channels) || beta.numel() != static_cast<std::size_t>(channels) ||
      stats.mean.size() != static_cast<std::size_t>(channels) || stats.var.size() != static_cast<std::size_t>(channels))
    fail(ErrorKind::ShapeMismatch, "batchnorm3d: channel count " + std::to_string(channels) + " does not match parameters");
  const std::size_t sv = static_cast<std::size_t>(x.dim(2)) * x.dim(3) * x.dim(4);
  const std::size_t count = static_cast<std::size_t>(n_batch) * sv;

  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(channels);
  std::vector<std::uint8_t> floored(channels, 0);
  auto at = [&](int n, int c) { return (static_cast<std::size_t>(n) * channels + c) * sv; };

  for (int c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (int n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < sv; ++i) s += x.data()[at(n, c) + i];
      mean = s / static_cast<double>(count);
      double ss = 0.0;
      for (int n = 0; n < n_batch; ++n)
        for (std::size_t i = 0; i < sv; ++i) {
          const double d = x.data()[at(n, c) + i] - mean;
          ss += d * d;
        }
      var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      stats.mean[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.mean[c] + kBatchNormMomentum * mean);
      stats.var[c] = static_cast<T>((1.0 - kBatchNormMomentum) * stats.var[c] + kBatchNormMomentum * unbiased);
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    if (var < kBatchNormEps) {
      var = kBatchNormEps;
      floored[c] = 1;
    }
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var));
    const T g = gamma.data()[c], b = beta.data()[c], m = static_cast<T>(mean);
    for (int n = 0; n < n_batch; ++n)
      for (std::size_t i = 0; i < sv; ++i) {
        const std::size_t j = at(n, c) + i;
        xhat[j] = (x.data()[j] - m) * inv_std[c];
        out[j] = g * xhat[j] + b;
      }
  }

  return make_result<T>(
      mode == Mode::Train ? "batchnorm3d" : "batchnorm3d_eval", x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat)](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        auto idx = [&](int n, int c) { return (static_cast<std::size_t>(n) * channels + c) * sv; };
        for (int c = 0; c < channels; ++c) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int n = 0; n < n_batch; ++n)
            for (std::size_t i = 0; i < sv; ++i) {
              const std::size_t j = idx(n, c) + i;
              sum_dy += self.grad[j];
              sum_dy_xhat += self.grad[j] * xhat[j];
            }
          if (gn.requires_grad) gn.grad_buffer()[c] += sum_dy_xhat;
          if (bn.requires_grad) bn.grad_buffer()[c] += sum_dy;
          if (!xn.requires_grad) continue;
          auto& dx = xn.grad_buffer();
          const T g = gn.data[c];
          if (mode == Mode::Eval) {
            for (int n = 0; n < n_batch; ++n)
              for (std::size_t i = 0; i < sv; ++i) dx[idx(n, c) + i] += self.grad[idx(n, c) + i] * g * inv_std[c];
            continue;
          }
          const T m = static_cast<T>(count);
          // With a floored variance only the mean depends on x.
          const T var_term = floored[c] ? T(0) : sum_dy_xhat;
          for (int n = 0; n < n_batch; ++n)
            for (std::size_t i = 0; i < sv; ++i) {
              const std::size_t j = idx(n, c) + i;
              dx[j] += g * inv_std[c] * (self.grad[j] - sum_dy / m - xhat[j] * var_term / m);
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax

/// Softmax across the channel axis of [N,C,...], max-subtracted per voxel.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  if (x.shape().size() < 2) fail(ErrorKind::ShapeMismatch, "softmax_channels needs a channel axis");
  const int n_batch = x.dim(0), channels = x.dim(1);
  const std::size_t sv = x.numel() / (static_cast<std::size_t>(n_batch) * channels);
  std::vector<T> out(x.numel());
  for (int n = 0; n < n_batch; ++n) {
    const T* xn = x.data().data() + static_cast<std::size_t>(n) * channels * sv;
    T* yn = out.data() + static_cast<std::size_t>(n) * channels * sv;
    for (std::size_t i = 0; i < sv; ++i) {
      T mx = xn[i];
      for (int c = 1; c < channels; ++c) mx = std::max(mx, xn[c * sv + i]);
      T z = T(0);
      for (int c = 0; c < channels; ++c) {
        const T e = std::exp(xn[c * sv + i] - mx);
        yn[c * sv + i] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (int c = 0; c < channels; ++c) yn[c * sv + i] *= inv;
    }
  }
  return make_result<T>("softmax_channels", x.shape(), std::move(out), {x}, [=](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * channels * sv;
      const T* y = self.data.data() + base;
      const T* dy = self.grad.data() + base;
      for (std::size_t i = 0; i < sv; ++i) {
        T dot = T(0);
        for (int c = 0; c < channels; ++c) dot += y[c * sv + i] * dy[c * sv + i];
        for (int c = 0; c < channels; ++c) g[base + c * sv + i] += y[c * sv + i] * (dy[c * sv + i] - dot);
      }
    }
  });
}

}  // namespace lobekit::ad
