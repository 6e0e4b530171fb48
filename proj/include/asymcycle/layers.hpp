#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymcycle/rng.hpp"
#include "asymcycle/tensor.hpp"

namespace asymcycle {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

/// A learnable tensor with its gradient accumulator.
template <typename T>
struct ParamTensor {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() { grad.fill(T(0)); }
};

namespace nn {

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const Tensor<T>& x, int sample, int k, int stride, int pad, int h_out, int w_out,
            AlignedVector<T>& col) {
  const int c_in = x.c(), h = x.h(), w = x.w();
  col.assign(static_cast<std::size_t>(c_in) * k * k * h_out * w_out, T(0));
  const int cols = h_out * w_out;
  for (int c = 0; c < c_in; ++c) {
    const T* plane = x.plane(sample, c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * cols;
        for (int oy = 0; oy < h_out; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            dst += w_out;
            continue;
          }
          const T* src_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < w_out; ++ox, ++dst) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) *dst = src_row[ix];
          }
        }
      }
  }
}

template <typename T>
void col2im_add(const AlignedVector<T>& col, int k, int stride, int pad, int h_out, int w_out,
                Tensor<T>& dx, int sample) {
  const int c_in = dx.c(), h = dx.h(), w = dx.w();
  const int cols = h_out * w_out;
  for (int c = 0; c < c_in; ++c) {
    T* plane = dx.plane(sample, c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * cols;
        for (int oy = 0; oy < h_out; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            src += w_out;
            continue;
          }
          T* dst_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < w_out; ++ox, ++src) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst_row[ix] += *src;
          }
        }
      }
  }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dCache {
  std::vector<AlignedVector<T>> cols;  // one im2col matrix per sample
  std::array<int, 4> in_shape{0, 0, 0, 0};
  int h_out = 0, w_out = 0;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  /// has_bias is false for convolutions feeding an affine-free instance norm,
  /// where a bias would be a dead parameter (the norm subtracts it away).
  Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad, std::string name,
         bool has_bias = true)
      : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad),
        has_bias_(has_bias) {
    weight_.name = name + ".weight";
    weight_.value = Tensor<T>(out_ch, in_ch, ksize, ksize);
    weight_.grad = Tensor<T>(out_ch, in_ch, ksize, ksize);
    if (has_bias_) {
      bias_.name = name + ".bias";
      bias_.value = Tensor<T>(1, out_ch, 1, 1);
      bias_.grad = Tensor<T>(1, out_ch, 1, 1);
    }
  }

  void init(Rng& rng, double stddev) {
    for (std::size_t i = 0; i < weight_.value.size(); ++i)
      weight_.value[i] = static_cast<T>(rng.normal(0.0, stddev));
    if (has_bias_) bias_.value.fill(T(0));
  }

  int out_size(int in_size) const { return (in_size + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> forward(const Tensor<T>& x, Conv2dCache<T>& cache) const {
    if (x.c() != in_ch_) throw std::invalid_argument("Conv2d: channel mismatch");
    const int h_out = out_size(x.h()), w_out = out_size(x.w());
    if (h_out < 1 || w_out < 1) throw std::invalid_argument("Conv2d: output underflow");
    cache.in_shape = x.shape();
    cache.h_out = h_out;
    cache.w_out = w_out;
    cache.cols.resize(x.n());

    Tensor<T> y(x.n(), out_ch_, h_out, w_out);
    const int rows = in_ch_ * k_ * k_;
    const int cols = h_out * w_out;
    ConstMapMat<T> wmat(weight_.value.data(), out_ch_, rows);
    for (int n = 0; n < x.n(); ++n) {
      im2col(x, n, k_, stride_, pad_, h_out, w_out, cache.cols[n]);
      ConstMapMat<T> colmat(cache.cols[n].data(), rows, cols);
      MapMat<T> ymat(y.plane(n, 0), out_ch_, cols);
      ymat.noalias() = wmat * colmat;
      if (has_bias_)
        for (int oc = 0; oc < out_ch_; ++oc) ymat.row(oc).array() += bias_.value[oc];
    }
    return y;
  }

  /// Returns dL/dx; accumulates dL/dW and dL/db when accumulate_param_grads.
  Tensor<T> backward(const Conv2dCache<T>& cache, const Tensor<T>& dy,
                     bool accumulate_param_grads) {
    const auto& is = cache.in_shape;
    const int rows = in_ch_ * k_ * k_;
    const int cols = cache.h_out * cache.w_out;
    Tensor<T> dx(is[0], is[1], is[2], is[3]);
    ConstMapMat<T> wmat(weight_.value.data(), out_ch_, rows);
    MapMat<T> dwmat(weight_.grad.data(), out_ch_, rows);
    AlignedVector<T> dcol(static_cast<std::size_t>(rows) * cols);
    for (int n = 0; n < is[0]; ++n) {
      ConstMapMat<T> dymat(dy.plane(n, 0), out_ch_, cols);
      if (accumulate_param_grads) {
        ConstMapMat<T> colmat(cache.cols[n].data(), rows, cols);
        dwmat.noalias() += dymat * colmat.transpose();
        if (has_bias_)
          for (int oc = 0; oc < out_ch_; ++oc) bias_.grad[oc] += dymat.row(oc).sum();
      }
      MapMat<T> dcolmat(dcol.data(), rows, cols);
      dcolmat.noalias() = wmat.transpose() * dymat;
      col2im_add(dcol, k_, stride_, pad_, cache.h_out, cache.w_out, dx, n);
    }
    return dx;
  }

  ParamTensor<T>& weight() { return weight_; }
  ParamTensor<T>& bias() { return bias_; }
  const ParamTensor<T>& weight() const { return weight_; }
  const ParamTensor<T>& bias() const { return bias_; }
  bool has_bias() const { return has_bias_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }

  void collect_params(std::vector<ParamTensor<T>*>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

 private:
  int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  bool has_bias_ = true;
  ParamTensor<T> weight_;
  ParamTensor<T> bias_;
};

// ---------------------------------------------------------------------------
// Instance normalization (affine-free, per sample and channel)
// ---------------------------------------------------------------------------

template <typename T>
struct InstanceNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // one per (n, c)
};

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, InstanceNormCache<T>& cache,
                                T eps = T(1e-5)) {
  const int plane_size = x.h() * x.w();
  cache.xhat = Tensor<T>(x.n(), x.c(), x.h(), x.w());
  cache.inv_std.assign(static_cast<std::size_t>(x.n()) * x.c(), T(0));
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* xh = cache.xhat.plane(n, c);
      T* dst = y.plane(n, c);
      T mean = T(0);
      for (int i = 0; i < plane_size; ++i) mean += src[i];
      mean /= static_cast<T>(plane_size);
      T var = T(0);
      for (int i = 0; i < plane_size; ++i) {
        const T d = src[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(plane_size);
      const T inv_std = T(1) / std::sqrt(var + eps);
      cache.inv_std[static_cast<std::size_t>(n) * x.c() + c] = inv_std;
      for (int i = 0; i < plane_size; ++i) {
        xh[i] = (src[i] - mean) * inv_std;
        dst[i] = xh[i];
      }
    }
  return y;
}

template <typename T>
Tensor<T> instance_norm_backward(const InstanceNormCache<T>& cache, const Tensor<T>& dy) {
  const auto& xhat = cache.xhat;
  const int plane_size = xhat.h() * xhat.w();
  Tensor<T> dx(xhat.n(), xhat.c(), xhat.h(), xhat.w());
  for (int n = 0; n < xhat.n(); ++n)
    for (int c = 0; c < xhat.c(); ++c) {
      const T* xh = xhat.plane(n, c);
      const T* g = dy.plane(n, c);
      T* out = dx.plane(n, c);
      const T inv_std = cache.inv_std[static_cast<std::size_t>(n) * xhat.c() + c];
      T sum_g = T(0), sum_gx = T(0);
      for (int i = 0; i < plane_size; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * xh[i];
      }
      const T inv_n = T(1) / static_cast<T>(plane_size);
      for (int i = 0; i < plane_size; ++i)
        out[i] = inv_std * (g[i] - inv_n * sum_g - xh[i] * inv_n * sum_gx);
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { RELU, LRELU, TANH };

template <typename T>
struct ActCache {
  Tensor<T> y;
  Act kind = Act::RELU;
};

template <typename T>
Tensor<T> act_forward(const Tensor<T>& x, Act kind, ActCache<T>& cache, T slope = T(0.2)) {
  Tensor<T> y(x.n(), x.c(), x.h(), x.w());
  switch (kind) {
    case Act::RELU:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Act::LRELU:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
      break;
    case Act::TANH:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      break;
  }
  cache.kind = kind;
  cache.y = y;
  return y;
}

template <typename T>
Tensor<T> act_backward(const ActCache<T>& cache, const Tensor<T>& dy, T slope = T(0.2)) {
  const auto& y = cache.y;
  Tensor<T> dx(y.n(), y.c(), y.h(), y.w());
  switch (cache.kind) {
    case Act::RELU:
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
      break;
    case Act::LRELU:
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : slope * dy[i];
      break;
    case Act::TANH:
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
      break;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour 2x upsampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& x) {
  Tensor<T> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      T* dst = y.plane(n, c);
      const int w = x.w();
      for (int iy = 0; iy < x.h(); ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const T v = src[iy * w + ix];
          T* row0 = dst + (2 * iy) * (2 * w) + 2 * ix;
          T* row1 = row0 + 2 * w;
          row0[0] = row0[1] = row1[0] = row1[1] = v;
        }
    }
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n(), dy.c(), dy.h() / 2, dy.w() / 2);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* src = dy.plane(n, c);
      T* dst = dx.plane(n, c);
      const int w = dx.w();
      for (int iy = 0; iy < dx.h(); ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const T* row0 = src + (2 * iy) * (2 * w) + 2 * ix;
          const T* row1 = row0 + 2 * w;
          dst[iy * w + ix] = row0[0] + row0[1] + row1[0] + row1[1];
        }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw std::invalid_argument("concat_channels: spatial/batch mismatch");
  Tensor<T> y(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
  for (int n = 0; n < a.n(); ++n) {
    for (int c = 0; c < a.c(); ++c)
      std::copy(a.plane(n, c), a.plane(n, c) + plane, y.plane(n, c));
    for (int c = 0; c < b.c(); ++c)
      std::copy(b.plane(n, c), b.plane(n, c) + plane, y.plane(n, a.c() + c));
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& dy, Tensor<T>& da, Tensor<T>& db) {
  const std::size_t plane = static_cast<std::size_t>(dy.h()) * dy.w();
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < da.c(); ++c)
      std::copy(dy.plane(n, c), dy.plane(n, c) + plane, da.plane(n, c));
    for (int c = 0; c < db.c(); ++c)
      std::copy(dy.plane(n, da.c() + c), dy.plane(n, da.c() + c) + plane, db.plane(n, c));
  }
}

}  // namespace nn
}  // namespace asymcycle
