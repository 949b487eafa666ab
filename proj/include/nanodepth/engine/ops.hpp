#pragma once

// Forward and backward kernels for the fixed operation set of the depth
// networks: convolutions (full, depthwise, pointwise), SELU, batchnorm,
// 2x2 pooling, align-corners bilinear 2x upsampling and channel concat.
//
// Convolutions are cross-correlations with zero padding. Every kernel
// partitions work over whole output planes, so results are bitwise
// independent of num_threads().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "nanodepth/engine/parallel.hpp"
#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth {

/// Read-only view that never participates in template deduction.
template <typename T>
using ConstSpan = std::span<const std::type_identity_t<T>>;

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// SELU scale and negative-branch constant. The defaults are the fixed point
/// that keeps activations at zero mean and unit variance.
struct SeluParams {
  double lambda = 1.0507009873554805;
  double alpha = 1.6732632423543772;
};

enum class PoolKind { kAvg, kMax };

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;  // {outC,1,1,1}; all zero when the layer has no bias
};

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                                const char* op, const char* axis) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (in + 2 * pad < k) {
    throw ShapeError(std::string(op) + ": non-positive output " + axis + " (input " + std::to_string(in) +
                     ", kernel " + std::to_string(k) + ", pad " + std::to_string(pad) + ")");
  }
  return (in + 2 * pad - k) / stride + 1;
}

// Output columns ow with 0 <= ow*stride - pad + kw < in_w, as a half-open range.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out_len, std::size_t in_len, std::size_t stride,
                                                       std::size_t pad, std::size_t k_off) {
  // need ow*stride + k_off >= pad and ow*stride + k_off < in_len + pad
  std::size_t lo = 0;
  if (k_off < pad) lo = (pad - k_off + stride - 1) / stride;
  std::size_t hi = 0;
  if (in_len + pad > k_off) hi = (in_len + pad - k_off + stride - 1) / stride;
  hi = std::min(hi, out_len);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

template <typename T>
void check_bias(ConstSpan<T> bias, std::size_t out_c, const char* op) {
  if (!bias.empty() && bias.size() != out_c) {
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(out_c));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, ConstSpan<T> bias, ConvOptions opt) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weights expect " +
                     std::to_string(ws.c));
  }
  if (ws.h % 2 == 0 || ws.w % 2 == 0) throw ShapeError("conv2d: kernel dims must be odd, got " + ws.str());
  detail::check_bias<T>(bias, ws.n, "conv2d");
  const std::size_t oh = detail::conv_out_dim(xs.h, ws.h, opt.stride, opt.pad, "conv2d", "height");
  const std::size_t ow = detail::conv_out_dim(xs.w, ws.w, opt.stride, opt.pad, "conv2d", "width");
  Tensor<T> y(Shape{xs.n, ws.n, oh, ow});
  const bool pointwise = ws.h == 1 && ws.w == 1 && opt.stride == 1 && opt.pad == 0;

  parallel_for(xs.n * ws.n, [&](std::size_t job) {
    const std::size_t n = job / ws.n;
    const std::size_t oc = job % ws.n;
    auto out = y.plane(n, oc);
    const T b = bias.empty() ? T(0) : bias[oc];
    std::fill(out.begin(), out.end(), b);
    if (pointwise) {
      for (std::size_t ic = 0; ic < xs.c; ++ic) {
        const T wv = w.at(oc, ic, 0, 0);
        auto in = x.plane(n, ic);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv * in[i];
      }
      return;
    }
    for (std::size_t ic = 0; ic < xs.c; ++ic) {
      auto in = x.plane(n, ic);
      for (std::size_t kh = 0; kh < ws.h; ++kh) {
        const auto [h0, h1] = detail::valid_range(oh, xs.h, opt.stride, opt.pad, kh);
        for (std::size_t kw = 0; kw < ws.w; ++kw) {
          const T wv = w.at(oc, ic, kh, kw);
          const auto [w0, w1] = detail::valid_range(ow, xs.w, opt.stride, opt.pad, kw);
          for (std::size_t r = h0; r < h1; ++r) {
            const std::size_t ir = r * opt.stride + kh - opt.pad;
            T* orow = out.data() + r * ow;
            const T* irow = in.data() + ir * xs.w;
            if (opt.stride == 1) {
              for (std::size_t q = w0; q < w1; ++q) orow[q] += wv * irow[q + kw - opt.pad];
            } else {
              for (std::size_t q = w0; q < w1; ++q) orow[q] += wv * irow[q * opt.stride + kw - opt.pad];
            }
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, ConvOptions opt) {
  return conv2d(x, w, std::span<const T>{}, opt);
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, ConvOptions opt) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const Shape& ys = dy.shape();
  if (ws.c != xs.c || ys.c != ws.n || ys.n != xs.n) {
    throw ShapeError("conv2d_backward: inconsistent shapes x=" + xs.str() + " w=" + ws.str() + " dy=" + ys.str());
  }
  const std::size_t oh = ys.h, ow = ys.w;
  ConvGrads<T> g{Tensor<T>(xs), Tensor<T>(ws), Tensor<T>(Shape{ws.n, 1, 1, 1})};

  // weights and bias: one job per output channel
  parallel_for(ws.n, [&](std::size_t oc) {
    T db = 0;
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (T v : dy.plane(n, oc)) db += v;
    }
    g.bias[oc] = db;
    for (std::size_t ic = 0; ic < xs.c; ++ic) {
      for (std::size_t kh = 0; kh < ws.h; ++kh) {
        const auto [h0, h1] = detail::valid_range(oh, xs.h, opt.stride, opt.pad, kh);
        for (std::size_t kw = 0; kw < ws.w; ++kw) {
          const auto [w0, w1] = detail::valid_range(ow, xs.w, opt.stride, opt.pad, kw);
          T acc = 0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            auto in = x.plane(n, ic);
            auto d = dy.plane(n, oc);
            for (std::size_t r = h0; r < h1; ++r) {
              const std::size_t ir = r * opt.stride + kh - opt.pad;
              const T* drow = d.data() + r * ow;
              const T* irow = in.data() + ir * xs.w;
              for (std::size_t q = w0; q < w1; ++q) acc += drow[q] * irow[q * opt.stride + kw - opt.pad];
            }
          }
          g.weights.at(oc, ic, kh, kw) = acc;
        }
      }
    }
  });

  // input: one job per (n, ic) plane
  parallel_for(xs.n * xs.c, [&](std::size_t job) {
    const std::size_t n = job / xs.c;
    const std::size_t ic = job % xs.c;
    auto dx = g.input.plane(n, ic);
    for (std::size_t oc = 0; oc < ws.n; ++oc) {
      auto d = dy.plane(n, oc);
      for (std::size_t kh = 0; kh < ws.h; ++kh) {
        const auto [h0, h1] = detail::valid_range(oh, xs.h, opt.stride, opt.pad, kh);
        for (std::size_t kw = 0; kw < ws.w; ++kw) {
          const T wv = w.at(oc, ic, kh, kw);
          const auto [w0, w1] = detail::valid_range(ow, xs.w, opt.stride, opt.pad, kw);
          for (std::size_t r = h0; r < h1; ++r) {
            const std::size_t ir = r * opt.stride + kh - opt.pad;
            const T* drow = d.data() + r * ow;
            T* xrow = dx.data() + ir * xs.w;
            for (std::size_t q = w0; q < w1; ++q) xrow[q * opt.stride + kw - opt.pad] += wv * drow[q];
          }
        }
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// pointwise (1x1) convolution

template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& x, const Tensor<T>& w, ConstSpan<T> bias = {}) {
  if (w.h() != 1 || w.w() != 1) throw ShapeError("pointwise_conv: weights must be 1x1, got " + w.shape().str());
  return conv2d(x, w, bias, ConvOptions{1, 0});
}

template <typename T>
ConvGrads<T> pointwise_conv_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy) {
  return conv2d_backward(x, w, dy, ConvOptions{1, 0});
}

// ---------------------------------------------------------------------------
// depthwise convolution: weights {C,1,kH,kW}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, ConvOptions opt) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.n != xs.c || ws.c != 1) {
    throw ShapeError("depthwise_conv2d: weights " + ws.str() + " do not match " + std::to_string(xs.c) +
                     " input channels");
  }
  if (ws.h % 2 == 0 || ws.w % 2 == 0) throw ShapeError("depthwise_conv2d: kernel dims must be odd");
  const std::size_t oh = detail::conv_out_dim(xs.h, ws.h, opt.stride, opt.pad, "depthwise_conv2d", "height");
  const std::size_t ow = detail::conv_out_dim(xs.w, ws.w, opt.stride, opt.pad, "depthwise_conv2d", "width");
  Tensor<T> y(Shape{xs.n, xs.c, oh, ow});
  parallel_for(xs.n * xs.c, [&](std::size_t job) {
    const std::size_t n = job / xs.c;
    const std::size_t c = job % xs.c;
    auto out = y.plane(n, c);
    auto in = x.plane(n, c);
    for (std::size_t kh = 0; kh < ws.h; ++kh) {
      const auto [h0, h1] = detail::valid_range(oh, xs.h, opt.stride, opt.pad, kh);
      for (std::size_t kw = 0; kw < ws.w; ++kw) {
        const T wv = w.at(c, 0, kh, kw);
        const auto [w0, w1] = detail::valid_range(ow, xs.w, opt.stride, opt.pad, kw);
        for (std::size_t r = h0; r < h1; ++r) {
          const std::size_t ir = r * opt.stride + kh - opt.pad;
          T* orow = out.data() + r * ow;
          const T* irow = in.data() + ir * xs.w;
          for (std::size_t q = w0; q < w1; ++q) orow[q] += wv * irow[q * opt.stride + kw - opt.pad];
        }
      }
    }
  });
  return y;
}

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                                       ConvOptions opt) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.n != xs.c || dy.c() != xs.c || dy.n() != xs.n) {
    throw ShapeError("depthwise_conv2d_backward: inconsistent shapes");
  }
  const std::size_t oh = dy.h(), ow = dy.w();
  ConvGrads<T> g{Tensor<T>(xs), Tensor<T>(ws), Tensor<T>(Shape{ws.n, 1, 1, 1})};
  parallel_for(xs.c, [&](std::size_t c) {
    for (std::size_t kh = 0; kh < ws.h; ++kh) {
      const auto [h0, h1] = detail::valid_range(oh, xs.h, opt.stride, opt.pad, kh);
      for (std::size_t kw = 0; kw < ws.w; ++kw) {
        const auto [w0, w1] = detail::valid_range(ow, xs.w, opt.stride, opt.pad, kw);
        const T wv = w.at(c, 0, kh, kw);
        T acc = 0;
        for (std::size_t n = 0; n < xs.n; ++n) {
          auto in = x.plane(n, c);
          auto d = dy.plane(n, c);
          auto dx = g.input.plane(n, c);
          for (std::size_t r = h0; r < h1; ++r) {
            const std::size_t ir = r * opt.stride + kh - opt.pad;
            const T* drow = d.data() + r * ow;
            const T* irow = in.data() + ir * xs.w;
            T* xrow = dx.data() + ir * xs.w;
            for (std::size_t q = w0; q < w1; ++q) {
              const std::size_t col = q * opt.stride + kw - opt.pad;
              acc += drow[q] * irow[col];
              xrow[col] += wv * drow[q];
            }
          }
        }
        g.weights.at(c, 0, kh, kw) = acc;
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// SELU

template <typename T>
inline T selu_scalar(T x, const SeluParams& p) {
  const T lambda = static_cast<T>(p.lambda);
  const T alpha = static_cast<T>(p.alpha);
  return x > T(0) ? lambda * x : lambda * (alpha * std::exp(x) - alpha);
}

/// Derivative; at exactly 0 the right derivative lambda is used.
template <typename T>
inline T selu_grad_scalar(T x, const SeluParams& p) {
  const T lambda = static_cast<T>(p.lambda);
  return x >= T(0) ? lambda : lambda * static_cast<T>(p.alpha) * std::exp(x);
}

template <typename T>
Tensor<T> selu(const Tensor<T>& x, const SeluParams& p = {}) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = selu_scalar(x[i], p);
  return y;
}

template <typename T>
Tensor<T> selu_backward(const Tensor<T>& x, const Tensor<T>& dy, const SeluParams& p = {}) {
  if (x.shape() != dy.shape()) throw ShapeError("selu_backward: shape mismatch");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * selu_grad_scalar(x[i], p);
  return dx;
}

// ---------------------------------------------------------------------------
// batch normalization

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;       // (x - mean) * inv_std
  std::vector<T> mean;        // batch mean per channel
  std::vector<T> var;         // biased batch variance per channel
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

namespace detail {
template <typename T>
void check_bn_vectors(const Shape& s, std::initializer_list<std::size_t> lengths) {
  for (std::size_t len : lengths) {
    if (len != s.c) {
      throw ShapeError("batchnorm: per-channel vector of length " + std::to_string(len) + " for " +
                       std::to_string(s.c) + " channels");
    }
  }
}
}  // namespace detail

/// Inference form: gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, ConstSpan<T> mean, ConstSpan<T> var, ConstSpan<T> gamma,
                    ConstSpan<T> beta, T eps) {
  const Shape& s = x.shape();
  detail::check_bn_vectors<T>(s, {mean.size(), var.size(), gamma.size(), beta.size()});
  if (!(eps > T(0))) throw ShapeError("batchnorm: epsilon must be positive");
  Tensor<T> y(s);
  parallel_for(s.n * s.c, [&](std::size_t job) {
    const std::size_t c = job % s.c;
    const T scale = gamma[c] / std::sqrt(var[c] + eps);
    const T shift = beta[c] - mean[c] * scale;
    auto in = x.plane(job / s.c, c);
    auto out = y.plane(job / s.c, c);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * scale + shift;
  });
  return y;
}

/// Inference-form backward (statistics treated as constants).
template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& x, ConstSpan<T> mean, ConstSpan<T> var,
                                     ConstSpan<T> gamma, T eps, const Tensor<T>& dy) {
  const Shape& s = x.shape();
  detail::check_bn_vectors<T>(s, {mean.size(), var.size(), gamma.size()});
  BatchNormGrads<T> g{Tensor<T>(s), std::vector<T>(s.c, T(0)), std::vector<T>(s.c, T(0))};
  parallel_for(s.c, [&](std::size_t c) {
    const T inv = T(1) / std::sqrt(var[c] + eps);
    T dg = 0, db = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto in = x.plane(n, c);
      auto d = dy.plane(n, c);
      auto dx = g.input.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        dg += d[i] * (in[i] - mean[c]) * inv;
        db += d[i];
        dx[i] = d[i] * gamma[c] * inv;
      }
    }
    g.gamma[c] = dg;
    g.beta[c] = db;
  });
  return g;
}

/// Training form: normalizes with the batch statistics and returns them in `cache`.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, ConstSpan<T> gamma, ConstSpan<T> beta, T eps,
                          BatchNormCache<T>& cache) {
  const Shape& s = x.shape();
  detail::check_bn_vectors<T>(s, {gamma.size(), beta.size()});
  if (!(eps > T(0))) throw ShapeError("batchnorm: epsilon must be positive");
  cache.normalized = Tensor<T>(s);
  cache.mean.assign(s.c, T(0));
  cache.var.assign(s.c, T(0));
  cache.inv_std.assign(s.c, T(0));
  Tensor<T> y(s);
  const T count = static_cast<T>(s.n * s.plane());
  parallel_for(s.c, [&](std::size_t c) {
    T sum = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (T v : x.plane(n, c)) sum += v;
    }
    const T mean = sum / count;
    T sq = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (T v : x.plane(n, c)) sq += (v - mean) * (v - mean);
    }
    const T var = sq / count;
    const T inv = T(1) / std::sqrt(var + eps);
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.inv_std[c] = inv;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto in = x.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      auto out = y.plane(n, c);
      for (std::size_t i = 0; i < in.size(); ++i) {
        xh[i] = (in[i] - mean) * inv;
        out[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  });
  return y;
}

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BatchNormCache<T>& cache, ConstSpan<T> gamma,
                                           const Tensor<T>& dy) {
  const Shape& s = dy.shape();
  if (cache.normalized.shape() != s) throw ShapeError("batchnorm_train_backward: shape mismatch");
  detail::check_bn_vectors<T>(s, {gamma.size()});
  BatchNormGrads<T> g{Tensor<T>(s), std::vector<T>(s.c, T(0)), std::vector<T>(s.c, T(0))};
  const T count = static_cast<T>(s.n * s.plane());
  parallel_for(s.c, [&](std::size_t c) {
    T sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto d = dy.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      for (std::size_t i = 0; i < d.size(); ++i) {
        sum_dy += d[i];
        sum_dy_xh += d[i] * xh[i];
      }
    }
    g.gamma[c] = sum_dy_xh;
    g.beta[c] = sum_dy;
    const T k = gamma[c] * cache.inv_std[c] / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto d = dy.plane(n, c);
      auto xh = cache.normalized.plane(n, c);
      auto dx = g.input.plane(n, c);
      for (std::size_t i = 0; i < d.size(); ++i) dx[i] = k * (count * d[i] - sum_dy - xh[i] * sum_dy_xh);
    }
  });
  return g;
}

/// running = momentum * running + (1 - momentum) * batch
template <typename T>
void update_running_stats(std::span<std::type_identity_t<T>> running_mean, std::span<std::type_identity_t<T>> running_var, ConstSpan<T> batch_mean,
                          ConstSpan<T> batch_var, T momentum) {
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * batch_mean[c];
    running_var[c] = momentum * running_var[c] + (T(1) - momentum) * batch_var[c];
  }
}

// ---------------------------------------------------------------------------
// 2x2 stride-2 pooling

template <typename T>
Tensor<T> pool2(const Tensor<T>& x, PoolKind kind) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) throw ShapeError("pool2: spatial dims must be even, got " + s.str());
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  parallel_for(s.n * s.c, [&](std::size_t job) {
    auto in = x.plane(job / s.c, job % s.c);
    auto out = y.plane(job / s.c, job % s.c);
    for (std::size_t r = 0; r < oh; ++r) {
      const T* a = in.data() + 2 * r * s.w;
      const T* b = a + s.w;
      for (std::size_t q = 0; q < ow; ++q) {
        const T v0 = a[2 * q], v1 = a[2 * q + 1], v2 = b[2 * q], v3 = b[2 * q + 1];
        out[r * ow + q] = kind == PoolKind::kAvg ? (v0 + v1 + v2 + v3) * T(0.25)
                                                 : std::max(std::max(v0, v1), std::max(v2, v3));
      }
    }
  });
  return y;
}

/// Average pooling spreads dy/4; max pooling routes dy to the first
/// row-major argmax of each window.
template <typename T>
Tensor<T> pool2_backward(const Tensor<T>& x, const Tensor<T>& dy, PoolKind kind) {
  const Shape& s = x.shape();
  if (dy.n() != s.n || dy.c() != s.c || dy.h() * 2 != s.h || dy.w() * 2 != s.w) {
    throw ShapeError("pool2_backward: dy " + dy.shape().str() + " does not match input " + s.str());
  }
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> dx(s);
  parallel_for(s.n * s.c, [&](std::size_t job) {
    auto in = x.plane(job / s.c, job % s.c);
    auto d = dy.plane(job / s.c, job % s.c);
    auto g = dx.plane(job / s.c, job % s.c);
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t q = 0; q < ow; ++q) {
        const std::size_t idx[4] = {2 * r * s.w + 2 * q, 2 * r * s.w + 2 * q + 1, (2 * r + 1) * s.w + 2 * q,
                                    (2 * r + 1) * s.w + 2 * q + 1};
        const T v = d[r * ow + q];
        if (kind == PoolKind::kAvg) {
          for (std::size_t i : idx) g[i] += v * T(0.25);
        } else {
          std::size_t best = idx[0];
          for (std::size_t k = 1; k < 4; ++k) {
            if (in[idx[k]] > in[best]) best = idx[k];
          }
          g[best] += v;
        }
      }
    }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// bilinear 2x upsampling, align-corners convention

namespace detail {
struct LerpTap {
  std::size_t i0;
  std::size_t i1;
  double frac;
};

inline std::vector<LerpTap> align_corners_taps(std::size_t in_len, std::size_t out_len) {
  std::vector<LerpTap> taps(out_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    if (in_len == 1 || out_len == 1) {
      taps[o] = {0, 0, 0.0};
      continue;
    }
    // exact rational position o*(in-1)/(out-1)
    const std::size_t num = o * (in_len - 1);
    const std::size_t den = out_len - 1;
    const std::size_t i0 = num / den;
    const std::size_t rem = num % den;
    taps[o] = {i0, std::min(i0 + 1, in_len - 1), static_cast<double>(rem) / static_cast<double>(den)};
  }
  return taps;
}
}  // namespace detail

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x) {
  const Shape& s = x.shape();
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  const auto rows = detail::align_corners_taps(s.h, oh);
  const auto cols = detail::align_corners_taps(s.w, ow);
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  parallel_for(s.n * s.c, [&](std::size_t job) {
    auto in = x.plane(job / s.c, job % s.c);
    auto out = y.plane(job / s.c, job % s.c);
    for (std::size_t r = 0; r < oh; ++r) {
      const T fr = static_cast<T>(rows[r].frac);
      const T* a = in.data() + rows[r].i0 * s.w;
      const T* b = in.data() + rows[r].i1 * s.w;
      for (std::size_t q = 0; q < ow; ++q) {
        const T fc = static_cast<T>(cols[q].frac);
        const T top = a[cols[q].i0] * (T(1) - fc) + a[cols[q].i1] * fc;
        const T bot = b[cols[q].i0] * (T(1) - fc) + b[cols[q].i1] * fc;
        out[r * ow + q] = top * (T(1) - fr) + bot * fr;
      }
    }
  });
  return y;
}

/// Transpose of the interpolation; `input_shape` is the pre-upsampling shape.
template <typename T>
Tensor<T> bilinear_upsample2x_backward(const Shape& input_shape, const Tensor<T>& dy) {
  const Shape& s = input_shape;
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  if (dy.n() != s.n || dy.c() != s.c || dy.h() != oh || dy.w() != ow) {
    throw ShapeError("bilinear_upsample2x_backward: dy " + dy.shape().str() + " vs input " + s.str());
  }
  const auto rows = detail::align_corners_taps(s.h, oh);
  const auto cols = detail::align_corners_taps(s.w, ow);
  Tensor<T> dx(s);
  parallel_for(s.n * s.c, [&](std::size_t job) {
    auto d = dy.plane(job / s.c, job % s.c);
    auto g = dx.plane(job / s.c, job % s.c);
    for (std::size_t r = 0; r < oh; ++r) {
      const T fr = static_cast<T>(rows[r].frac);
      T* a = g.data() + rows[r].i0 * s.w;
      T* b = g.data() + rows[r].i1 * s.w;
      for (std::size_t q = 0; q < ow; ++q) {
        const T fc = static_cast<T>(cols[q].frac);
        const T v = d[r * ow + q];
        a[cols[q].i0] += v * (T(1) - fr) * (T(1) - fc);
        a[cols[q].i1] += v * (T(1) - fr) * fc;
        b[cols[q].i0] += v * fr * (T(1) - fc);
        b[cols[q].i1] += v * fr * fc;
      }
    }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// channel concatenation

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + sa.str() + " and " + sb.str() + " differ outside the channel axis");
  }
  Tensor<T> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = sa.c * sa.plane(), pb = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.data() + n * pa, pa, y.data() + n * (pa + pb));
    std::copy_n(b.data() + n * pb, pb, y.data() + n * (pa + pb) + pa);
  }
  return y;
}

/// Splits dy into the parts belonging to the first `channels_a` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_channels_backward(const Tensor<T>& dy, std::size_t channels_a) {
  const Shape& s = dy.shape();
  if (channels_a == 0 || channels_a >= s.c) throw ShapeError("concat_channels_backward: bad split point");
  Tensor<T> da(Shape{s.n, channels_a, s.h, s.w});
  Tensor<T> db(Shape{s.n, s.c - channels_a, s.h, s.w});
  const std::size_t pa = channels_a * s.plane(), pb = (s.c - channels_a) * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(dy.data() + n * (pa + pb), pa, da.data() + n * pa);
    std::copy_n(dy.data() + n * (pa + pb) + pa, pb, db.data() + n * pb);
  }
  return {std::move(da), std::move(db)};
}

}  // namespace nanodepth
