#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "latent_atlas/tensor.hpp"

namespace latent_atlas::nn {

/// LeakyReLU forward slope used throughout the toolkit.
inline constexpr double kLeakySlope = 0.2;

// ---------------------------------------------------------------------------
// Fully connected layer
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }

  static Linear he_init(int in, int out, Rng& rng) {
    Linear l;
    l.weight = Tensor<T>::gaussian({out, in}, rng,
                                   static_cast<T>(std::sqrt(2.0 / in)));
    l.bias = Tensor<T>::zeros({out});
    return l;
  }
  static Linear zeros_like(const Linear& other) {
    Linear l;
    l.weight = Tensor<T>::zeros(other.weight.shape());
    l.bias = Tensor<T>::zeros(other.bias.shape());
    return l;
  }
};

/// y [B, out] = x [B, in] * W^T + b
template <typename T>
void linear_forward(const Linear<T>& p, const Tensor<T>& x, Tensor<T>& y) {
  const int batch = x.dim(0);
  const int in = p.in_features();
  const int out = p.out_features();
  if (y.shape() != std::vector<int>{batch, out}) y = Tensor<T>({batch, out});
  as_matrix(y, batch, out).noalias() =
      as_matrix(x, batch, in) * as_matrix(p.weight, out, in).transpose();
  for (int b = 0; b < batch; ++b) {
    for (int o = 0; o < out; ++o) y(b, o) += p.bias(o);
  }
}

template <typename T>
void linear_backward(const Linear<T>& p, const Tensor<T>& x, const Tensor<T>& dy,
                     Tensor<T>* dx, Linear<T>* dp) {
  const int batch = x.dim(0);
  const int in = p.in_features();
  const int out = p.out_features();
  if (dx) {
    if (!dx->same_shape(x)) *dx = Tensor<T>(x.shape());
    as_matrix(*dx, batch, in).noalias() =
        as_matrix(dy, batch, out) * as_matrix(p.weight, out, in);
  }
  if (dp) {
    as_matrix(dp->weight, out, in).noalias() +=
        as_matrix(dy, batch, out).transpose() * as_matrix(x, batch, in);
    for (int b = 0; b < batch; ++b) {
      for (int o = 0; o < out; ++o) dp->bias(o) += dy(b, o);
    }
  }
}

// ---------------------------------------------------------------------------
// 2-D convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
  int stride = 1;
  int pad = 0;

  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
  int kernel() const { return weight.dim(2); }

  static Conv2d he_init(int in, int out, int k, int stride, int pad, Rng& rng) {
    Conv2d c;
    c.weight = Tensor<T>::gaussian({out, in, k, k}, rng,
                                   static_cast<T>(std::sqrt(2.0 / (in * k * k))));
    c.bias = Tensor<T>::zeros({out});
    c.stride = stride;
    c.pad = pad;
    return c;
  }
  static Conv2d zeros_like(const Conv2d& other) {
    Conv2d c;
    c.weight = Tensor<T>::zeros(other.weight.shape());
    c.bias = Tensor<T>::zeros(other.bias.shape());
    c.stride = other.stride;
    c.pad = other.pad;
    return c;
  }

  int out_size(int in_size) const { return (in_size + 2 * pad - kernel()) / stride + 1; }
};

/// Scratch buffers reused across repeated forward/backward calls of one conv.
template <typename T>
struct ConvWorkspace {
  Tensor<T> cols;   // [in*k*k, oh*ow]
  Tensor<T> dcols;  // same shape, backward only
};

template <typename T>
void im2col(const Tensor<T>& x, int item, int k, int stride, int pad, int oh, int ow,
            Tensor<T>& cols) {
  const int c_in = x.dim(1);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const int rows = c_in * k * k;
  if (cols.shape() != std::vector<int>{rows, oh * ow}) cols = Tensor<T>({rows, oh * ow});
  T* out = cols.data();
  const T* in = x.data() + static_cast<std::int64_t>(item) * c_in * h * w;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = out + (static_cast<std::int64_t>(c) * k * k + ky * k + kx) *
                           (static_cast<std::int64_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
            continue;
          }
          const T* src_row = in + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Tensor<T>& cols, int item, int k, int stride, int pad, int oh,
                int ow, Tensor<T>& dx) {
  const int c_in = dx.dim(1);
  const int h = dx.dim(2);
  const int w = dx.dim(3);
  T* out = dx.data() + static_cast<std::int64_t>(item) * c_in * h * w;
  const T* in = cols.data();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = in + (static_cast<std::int64_t>(c) * k * k + ky * k + kx) *
                               (static_cast<std::int64_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst_row = out + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst_row[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

/// y [B, out, oh, ow] = conv(x [B, in, h, w])
template <typename T>
void conv2d_forward(const Conv2d<T>& p, const Tensor<T>& x, Tensor<T>& y,
                    ConvWorkspace<T>& ws) {
  const int batch = x.dim(0);
  const int oh = p.out_size(x.dim(2));
  const int ow = p.out_size(x.dim(3));
  const int c_out = p.out_channels();
  const int rows = p.in_channels() * p.kernel() * p.kernel();
  if (y.shape() != std::vector<int>{batch, c_out, oh, ow}) {
    y = Tensor<T>({batch, c_out, oh, ow});
  }
  for (int b = 0; b < batch; ++b) {
    im2col(x, b, p.kernel(), p.stride, p.pad, oh, ow, ws.cols);
    MatMap<T> out(y.data() + static_cast<std::int64_t>(b) * c_out * oh * ow, c_out,
                  oh * ow);
    out.noalias() = as_matrix(p.weight, c_out, rows) * as_matrix(ws.cols, rows, oh * ow);
    for (int c = 0; c < c_out; ++c) out.row(c).array() += p.bias(c);
  }
}

template <typename T>
void conv2d_backward(const Conv2d<T>& p, const Tensor<T>& x, const Tensor<T>& dy,
                     Tensor<T>* dx, Conv2d<T>* dp, ConvWorkspace<T>& ws) {
  const int batch = x.dim(0);
  const int oh = dy.dim(2);
  const int ow = dy.dim(3);
  const int c_out = p.out_channels();
  const int rows = p.in_channels() * p.kernel() * p.kernel();
  if (dx) {
    if (!dx->same_shape(x)) *dx = Tensor<T>(x.shape());
    dx->set_zero();
  }
  for (int b = 0; b < batch; ++b) {
    ConstMatMap<T> dout(dy.data() + static_cast<std::int64_t>(b) * c_out * oh * ow,
                        c_out, oh * ow);
    if (dp) {
      im2col(x, b, p.kernel(), p.stride, p.pad, oh, ow, ws.cols);
      as_matrix(dp->weight, c_out, rows).noalias() +=
          dout * as_matrix(ws.cols, rows, oh * ow).transpose();
      // Fixed-order reduction: Eigen's redux over an unaligned map picks its
      // vector prologue from the runtime address, which breaks bit-for-bit
      // reproducibility across reruns.
      for (int c = 0; c < c_out; ++c) {
        const T* row = dy.data() + (static_cast<std::int64_t>(b) * c_out + c) *
                                       static_cast<std::int64_t>(oh) * ow;
        T acc = T(0);
        for (int i = 0; i < oh * ow; ++i) acc += row[i];
        dp->bias(c) += acc;
      }
    }
    if (dx) {
      if (ws.dcols.shape() != std::vector<int>{rows, oh * ow}) {
        ws.dcols = Tensor<T>({rows, oh * ow});
      }
      as_matrix(ws.dcols, rows, oh * ow).noalias() =
          as_matrix(p.weight, c_out, rows).transpose() * dout;
      col2im_add(ws.dcols, b, p.kernel(), p.stride, p.pad, oh, ow, *dx);
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise activations (backward recovers the mask from the output)
// ---------------------------------------------------------------------------

template <typename T>
void leaky_relu_forward(const Tensor<T>& x, Tensor<T>& y, T slope = T(kLeakySlope)) {
  if (!y.same_shape(x)) y = Tensor<T>(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

template <typename T>
void leaky_relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx,
                         T slope = T(kLeakySlope)) {
  if (!dx.same_shape(y)) dx = Tensor<T>(y.shape());
  const std::int64_t n = y.numel();
  for (std::int64_t i = 0; i < n; ++i) dx[i] = y[i] > T(0) ? dy[i] : slope * dy[i];
}

template <typename T>
void tanh_forward(const Tensor<T>& x, Tensor<T>& y) {
  if (!y.same_shape(x)) y = Tensor<T>(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

template <typename T>
void tanh_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  if (!dx.same_shape(y)) dx = Tensor<T>(y.shape());
  const std::int64_t n = y.numel();
  for (std::int64_t i = 0; i < n; ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Nearest-neighbour x2 upsample, [B,C,H,W] -> [B,C,2H,2W].
template <typename T>
void upsample2_forward(const Tensor<T>& x, Tensor<T>& y) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (y.shape() != std::vector<int>{batch, c, 2 * h, 2 * w}) {
    y = Tensor<T>({batch, c, 2 * h, 2 * w});
  }
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          const T v = x(b, ch, iy, ix);
          y(b, ch, 2 * iy, 2 * ix) = v;
          y(b, ch, 2 * iy, 2 * ix + 1) = v;
          y(b, ch, 2 * iy + 1, 2 * ix) = v;
          y(b, ch, 2 * iy + 1, 2 * ix + 1) = v;
        }
      }
    }
  }
}

template <typename T>
void upsample2_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const int batch = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  if (dx.shape() != std::vector<int>{batch, c, h, w}) dx = Tensor<T>({batch, c, h, w});
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          dx(b, ch, iy, ix) = dy(b, ch, 2 * iy, 2 * ix) + dy(b, ch, 2 * iy, 2 * ix + 1) +
                              dy(b, ch, 2 * iy + 1, 2 * ix) +
                              dy(b, ch, 2 * iy + 1, 2 * ix + 1);
        }
      }
    }
  }
}

/// Area-average downsample by an integer factor.
template <typename T>
void avg_downsample_forward(const Tensor<T>& x, int factor, Tensor<T>& y) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2) / factor, w = x.dim(3) / factor;
  if (y.shape() != std::vector<int>{batch, c, h, w}) y = Tensor<T>({batch, c, h, w});
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
          T acc = T(0);
          for (int ky = 0; ky < factor; ++ky) {
            for (int kx = 0; kx < factor; ++kx) {
              acc += x(b, ch, oy * factor + ky, ox * factor + kx);
            }
          }
          y(b, ch, oy, ox) = acc * inv;
        }
      }
    }
  }
}

template <typename T>
void avg_downsample_backward(const Tensor<T>& dy, int factor, Tensor<T>& dx) {
  const int batch = dy.dim(0), c = dy.dim(1), h = dy.dim(2) * factor,
            w = dy.dim(3) * factor;
  if (dx.shape() != std::vector<int>{batch, c, h, w}) dx = Tensor<T>({batch, c, h, w});
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          dx(b, ch, iy, ix) = dy(b, ch, iy / factor, ix / factor) * inv;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Instance normalization (per sample, per channel, over spatial positions)
// ---------------------------------------------------------------------------

template <typename T>
struct InstanceNormCtx {
  Tensor<T> normalized;  // [B,C,H,W]
  Tensor<T> inv_std;     // [B,C]
};

template <typename T>
void instance_norm_forward(const Tensor<T>& x, Tensor<T>& y, InstanceNormCtx<T>& ctx,
                           T eps = T(1e-8)) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int hw = h * w;
  if (!y.same_shape(x)) y = Tensor<T>(x.shape());
  if (!ctx.normalized.same_shape(x)) ctx.normalized = Tensor<T>(x.shape());
  if (ctx.inv_std.shape() != std::vector<int>{batch, c}) ctx.inv_std = Tensor<T>({batch, c});
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* px = &x(b, ch, 0, 0);
      T mean = T(0);
      for (int i = 0; i < hw; ++i) mean += px[i];
      mean /= static_cast<T>(hw);
      T var = T(0);
      for (int i = 0; i < hw; ++i) {
        const T d = px[i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(hw);
      const T inv = T(1) / std::sqrt(var + eps);
      ctx.inv_std(b, ch) = inv;
      T* pn = &ctx.normalized(b, ch, 0, 0);
      T* py = &y(b, ch, 0, 0);
      for (int i = 0; i < hw; ++i) {
        pn[i] = (px[i] - mean) * inv;
        py[i] = pn[i];
      }
    }
  }
}

template <typename T>
void instance_norm_backward(const InstanceNormCtx<T>& ctx, const Tensor<T>& dy,
                            Tensor<T>& dx) {
  const int batch = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  if (!dx.same_shape(dy)) dx = Tensor<T>(dy.shape());
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* pdy = &dy(b, ch, 0, 0);
      const T* pn = &ctx.normalized(b, ch, 0, 0);
      T* pdx = &dx(b, ch, 0, 0);
      T sum_dy = T(0), sum_dyn = T(0);
      for (int i = 0; i < hw; ++i) {
        sum_dy += pdy[i];
        sum_dyn += pdy[i] * pn[i];
      }
      const T mean_dy = sum_dy / static_cast<T>(hw);
      const T mean_dyn = sum_dyn / static_cast<T>(hw);
      const T inv = ctx.inv_std(b, ch);
      for (int i = 0; i < hw; ++i) {
        pdx[i] = inv * (pdy[i] - mean_dy - pn[i] * mean_dyn);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Channel bias
// ---------------------------------------------------------------------------

template <typename T>
void channel_bias_forward(const Tensor<T>& x, const Tensor<T>& bias, Tensor<T>& y) {
  const int batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (!y.same_shape(x)) y = Tensor<T>(x.shape());
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* px = &x(b, ch, 0, 0);
      T* py = &y(b, ch, 0, 0);
      const T bv = bias(ch);
      for (int i = 0; i < hw; ++i) py[i] = px[i] + bv;
    }
  }
}

template <typename T>
void channel_bias_backward(const Tensor<T>& dy, Tensor<T>* dbias) {
  if (!dbias) return;
  const int batch = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* pdy = &dy(b, ch, 0, 0);
      T acc = T(0);
      for (int i = 0; i < hw; ++i) acc += pdy[i];
      (*dbias)(ch) += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// Style modulation: y = (1 + s_c) * x + t_c with [s; t] = affine(style vector)
// ---------------------------------------------------------------------------

template <typename T>
struct StyleModCtx {
  Tensor<T> input;       // normalized features the modulation was applied to
  Tensor<T> affine_out;  // [B, 2C]
  Tensor<T> style;       // [B, d]
};

template <typename T>
void style_mod_forward(const Linear<T>& affine, const Tensor<T>& style,
                       const Tensor<T>& x, Tensor<T>& y, StyleModCtx<T>& ctx) {
  const int batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  linear_forward(affine, style, ctx.affine_out);
  ctx.input = x;
  ctx.style = style;
  if (!y.same_shape(x)) y = Tensor<T>(x.shape());
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T scale = T(1) + ctx.affine_out(b, ch);
      const T shift = ctx.affine_out(b, c + ch);
      const T* px = &x(b, ch, 0, 0);
      T* py = &y(b, ch, 0, 0);
      for (int i = 0; i < hw; ++i) py[i] = scale * px[i] + shift;
    }
  }
}

/// Backpropagates into the features, the style vector, and (optionally) the
/// affine parameters.
template <typename T>
void style_mod_backward(const Linear<T>& affine, const StyleModCtx<T>& ctx,
                        const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>* dstyle,
                        Linear<T>* daffine) {
  const int batch = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  if (!dx.same_shape(dy)) dx = Tensor<T>(dy.shape());
  Tensor<T> daffine_out({batch, 2 * c});
  for (int b = 0; b < batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T scale = T(1) + ctx.affine_out(b, ch);
      const T* pdy = &dy(b, ch, 0, 0);
      const T* px = &ctx.input(b, ch, 0, 0);
      T* pdx = &dx(b, ch, 0, 0);
      T dscale = T(0), dshift = T(0);
      for (int i = 0; i < hw; ++i) {
        pdx[i] = scale * pdy[i];
        dscale += pdy[i] * px[i];
        dshift += pdy[i];
      }
      daffine_out(b, ch) = dscale;
      daffine_out(b, c + ch) = dshift;
    }
  }
  if (dstyle || daffine) {
    linear_backward(affine, ctx.style, daffine_out, dstyle, daffine);
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed set of registered tensors. Moments are kept per slot;
/// registration order defines the gradient order expected by step().
template <typename T>
class AdamOptimizer {
public:
  explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

  int register_param(Tensor<T>* param) {
    params_.push_back(param);
    m_.push_back(Tensor<T>::zeros(param->shape()));
    v_.push_back(Tensor<T>::zeros(param->shape()));
    return static_cast<int>(params_.size()) - 1;
  }

  std::size_t size() const { return params_.size(); }
  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  /// grads[i] pairs with the i-th registered tensor; nullptr entries skip.
  void step(const std::vector<const Tensor<T>*>& grads) {
    if (grads.size() != params_.size()) {
      throw UsageError("AdamOptimizer::step: gradient count mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T ib1 = static_cast<T>(1.0 - cfg_.beta1), ib2 = static_cast<T>(1.0 - cfg_.beta2);
    const T lr1 = static_cast<T>(cfg_.learning_rate / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!grads[i]) continue;
      Tensor<T>& p = *params_[i];
      const Tensor<T>& g = *grads[i];
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      const std::int64_t n = p.numel();
      for (std::int64_t j = 0; j < n; ++j) {
        m[j] = b1 * m[j] + ib1 * g[j];
        v[j] = b2 * v[j] + ib2 * g[j] * g[j];
        p[j] -= lr1 * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }

private:
  AdamConfig cfg_;
  std::vector<Tensor<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace latent_atlas::nn
