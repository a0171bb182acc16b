#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "normkit/errors.hpp"
#include "normkit/parallel.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

enum class PaddingMode { zero, reflect };

inline const char* to_string(PaddingMode m) {
  return m == PaddingMode::zero ? "zero" : "reflect";
}

// Source index of padded coordinate i (range [0, size + 2*pad)) under mirror
// padding that does not repeat the edge pixel. Returns -1 for zero padding
// positions outside the image.
inline std::int64_t padded_source(std::int64_t i, std::int64_t pad,
                                  std::int64_t size, PaddingMode mode) {
  std::int64_t j = i - pad;
  if (j >= 0 && j < size) return j;
  if (mode == PaddingMode::zero) return -1;
  if (j < 0) j = -j;
  if (j >= size) j = 2 * (size - 1) - j;
  return j;
}

inline void check_padding(const Shape& s, std::int64_t pad, PaddingMode mode) {
  if (pad < 0) throw InvalidPadding("pad must be nonnegative");
  if (mode == PaddingMode::reflect && (pad > s.w - 1 || pad > s.h - 1)) {
    throw InvalidPadding("reflect pad " + std::to_string(pad) +
                         " exceeds input extent - 1 for " + s.str());
  }
}

inline Tensor4 pad2d(const Tensor4& x, std::int64_t pad, PaddingMode mode) {
  const Shape& s = x.shape();
  check_padding(s, pad, mode);
  if (pad == 0) return x;
  const Shape ps{s.t, s.c, s.w + 2 * pad, s.h + 2 * pad};
  Tensor4 out(ps, 0.0);
  for (std::int64_t t = 0; t < s.t; ++t)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t w = 0; w < ps.w; ++w) {
        const std::int64_t sw = padded_source(w, pad, s.w, mode);
        if (sw < 0) continue;
        for (std::int64_t h = 0; h < ps.h; ++h) {
          const std::int64_t sh = padded_source(h, pad, s.h, mode);
          if (sh < 0) continue;
          out(t, c, w, h) = x(t, c, sw, sh);
        }
      }
  return out;
}

// Adjoint of pad2d: zero padding drops the border, reflect padding folds
// each mirrored gradient back onto its source pixel.
inline Tensor4 pad2d_backward(const Tensor4& grad_padded, const Shape& input_shape,
                              std::int64_t pad, PaddingMode mode) {
  if (pad == 0) return grad_padded;
  const Shape& ps = grad_padded.shape();
  const Shape& s = input_shape;
  if (ps != Shape{s.t, s.c, s.w + 2 * pad, s.h + 2 * pad}) {
    throw ShapeMismatch("pad2d_backward: " + ps.str() + " vs input " + s.str());
  }
  Tensor4 out(s, 0.0);
  for (std::int64_t t = 0; t < s.t; ++t)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t w = 0; w < ps.w; ++w) {
        const std::int64_t sw = padded_source(w, pad, s.w, mode);
        if (sw < 0) continue;
        for (std::int64_t h = 0; h < ps.h; ++h) {
          const std::int64_t sh = padded_source(h, pad, s.h, mode);
          if (sh < 0) continue;
          out(t, c, sw, sh) += grad_padded(t, c, w, h);
        }
      }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip).

struct ConvParams {
  Tensor4 weight;               // (C_out, C_in, K, K)
  std::optional<Tensor4> bias;  // (1, C_out, 1, 1)
  std::int64_t stride = 1;
  PaddingMode padding = PaddingMode::zero;
  std::int64_t pad = 0;

  std::int64_t out_channels() const { return weight.shape().t; }
  std::int64_t in_channels() const { return weight.shape().c; }
  std::int64_t kernel() const { return weight.shape().w; }
};

struct ConvCache {
  bool valid = false;
  Shape input_shape;
  Tensor4 padded;
};

struct ConvGrads {
  Tensor4 x;
  Tensor4 weight;
  std::optional<Tensor4> bias;
};

inline std::int64_t conv_out_size(std::int64_t size, std::int64_t k,
                                  std::int64_t stride, std::int64_t pad) {
  return (size + 2 * pad - k) / stride + 1;
}

inline void validate_conv(const Shape& x, const ConvParams& p) {
  const Shape& ws = p.weight.shape();
  if (ws.w != ws.h || ws.w % 2 == 0) {
    throw InvalidArgument("conv kernel must be square with odd size, got " + ws.str());
  }
  if (p.stride < 1) throw InvalidArgument("conv stride must be positive");
  if (x.c != ws.c) {
    throw ShapeMismatch("conv input has " + std::to_string(x.c) +
                        " channels, kernel expects " + std::to_string(ws.c));
  }
  if (p.bias && p.bias->shape() != Shape{1, ws.t, 1, 1}) {
    throw ShapeMismatch("conv bias shape " + p.bias->shape().str());
  }
  check_padding(x, p.pad, p.padding);
  if (x.w + 2 * p.pad < ws.w || x.h + 2 * p.pad < ws.w) {
    throw InvalidShape("padded input " + x.str() + " smaller than kernel");
  }
}

inline Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p,
                              ConvCache* cache = nullptr) {
  validate_conv(x.shape(), p);
  Tensor4 xp = pad2d(x, p.pad, p.padding);
  const Shape& ps = xp.shape();
  const std::int64_t k = p.kernel();
  const std::int64_t s = p.stride;
  const std::int64_t cin = p.in_channels();
  const std::int64_t cout = p.out_channels();
  const std::int64_t ow = (ps.w - k) / s + 1;
  const std::int64_t oh = (ps.h - k) / s + 1;
  Tensor4 out(Shape{ps.t, cout, ow, oh}, 0.0);

  parallel_for(ps.t * cout, [&](std::int64_t task) {
    const std::int64_t t = task / cout;
    const std::int64_t co = task % cout;
    auto dst = out.plane(t, co);
    if (p.bias) std::fill(dst.begin(), dst.end(), (*p.bias)[co]);
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      auto src = xp.plane(t, ci);
      for (std::int64_t kw = 0; kw < k; ++kw)
        for (std::int64_t kh = 0; kh < k; ++kh) {
          const double wv = p.weight(co, ci, kw, kh);
          for (std::int64_t i = 0; i < ow; ++i) {
            const double* row = src.data() + (i * s + kw) * ps.h + kh;
            double* o = dst.data() + i * oh;
            for (std::int64_t j = 0; j < oh; ++j) o[j] += wv * row[j * s];
          }
        }
    }
  });

  if (cache) {
    cache->valid = true;
    cache->input_shape = x.shape();
    cache->padded = std::move(xp);
  }
  return out;
}

// With param_grads false only the input gradient is computed (frozen layers).
inline ConvGrads conv2d_backward(const Tensor4& grad_out, const ConvCache& cache,
                                 const ConvParams& p, bool param_grads = true) {
  if (!cache.valid) throw MissingForward("conv2d_backward called without forward cache");
  const Tensor4& xp = cache.padded;
  const Shape& ps = xp.shape();
  const std::int64_t k = p.kernel();
  const std::int64_t s = p.stride;
  const std::int64_t cin = p.in_channels();
  const std::int64_t cout = p.out_channels();
  const std::int64_t ow = (ps.w - k) / s + 1;
  const std::int64_t oh = (ps.h - k) / s + 1;
  if (grad_out.shape() != Shape{ps.t, cout, ow, oh}) {
    throw ShapeMismatch("conv2d_backward: grad_out " + grad_out.shape().str() +
                        " vs forward output " + Shape{ps.t, cout, ow, oh}.str());
  }

  ConvGrads g{Tensor4(cache.input_shape), Tensor4(p.weight.shape(), 0.0), std::nullopt};

  if (param_grads) {
    parallel_for(cout, [&](std::int64_t co) {
      for (std::int64_t ci = 0; ci < cin; ++ci)
        for (std::int64_t kw = 0; kw < k; ++kw)
          for (std::int64_t kh = 0; kh < k; ++kh) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < ps.t; ++t) {
              auto src = xp.plane(t, ci);
              auto go = grad_out.plane(t, co);
              for (std::int64_t i = 0; i < ow; ++i) {
                const double* row = src.data() + (i * s + kw) * ps.h + kh;
                const double* gr = go.data() + i * oh;
                for (std::int64_t j = 0; j < oh; ++j) acc += gr[j] * row[j * s];
              }
            }
            g.weight(co, ci, kw, kh) = acc;
          }
    });
    if (p.bias) {
      Tensor4 gb(Shape{1, cout, 1, 1}, 0.0);
      for (std::int64_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::int64_t t = 0; t < ps.t; ++t)
          for (double v : grad_out.plane(t, co)) acc += v;
        gb[co] = acc;
      }
      g.bias = std::move(gb);
    }
  }

  Tensor4 gxp(ps, 0.0);
  parallel_for(ps.t * cin, [&](std::int64_t task) {
    const std::int64_t t = task / cin;
    const std::int64_t ci = task % cin;
    auto dst = gxp.plane(t, ci);
    for (std::int64_t co = 0; co < cout; ++co) {
      auto go = grad_out.plane(t, co);
      for (std::int64_t kw = 0; kw < k; ++kw)
        for (std::int64_t kh = 0; kh < k; ++kh) {
          const double wv = p.weight(co, ci, kw, kh);
          for (std::int64_t i = 0; i < ow; ++i) {
            double* row = dst.data() + (i * s + kw) * ps.h + kh;
            const double* gr = go.data() + i * oh;
            for (std::int64_t j = 0; j < oh; ++j) row[j * s] += wv * gr[j];
          }
        }
    }
  });
  g.x = pad2d_backward(gxp, cache.input_shape, p.pad, p.padding);
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

struct ActivationCache {
  bool valid = false;
  Tensor4 saved;  // input for ReLU, output for sigmoid
};

inline Tensor4 relu_forward(const Tensor4& x, ActivationCache* cache = nullptr) {
  Tensor4 out = x;
  for (double& v : out.data()) v = v > 0.0 || std::isnan(v) ? v : 0.0;  // NaN propagates
  if (cache) {
    cache->valid = true;
    cache->saved = x;
  }
  return out;
}

// Subgradient at 0 is 0.
inline Tensor4 relu_backward(const Tensor4& grad_out, const ActivationCache& cache) {
  if (!cache.valid) throw MissingForward("relu_backward called without forward cache");
  require_same_shape(grad_out, cache.saved, "relu_backward");
  Tensor4 g = grad_out;
  auto x = cache.saved.data();
  auto d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(x[i] > 0.0)) d[i] = 0.0;
  }
  return g;
}

inline Tensor4 sigmoid_forward(const Tensor4& x, ActivationCache* cache = nullptr) {
  Tensor4 out = x;
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  if (cache) {
    cache->valid = true;
    cache->saved = out;
  }
  return out;
}

inline Tensor4 sigmoid_backward(const Tensor4& grad_out, const ActivationCache& cache) {
  if (!cache.valid) throw MissingForward("sigmoid_backward called without forward cache");
  require_same_shape(grad_out, cache.saved, "sigmoid_backward");
  Tensor4 g = grad_out;
  auto y = cache.saved.data();
  auto d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= y[i] * (1.0 - y[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling.

inline Tensor4 upsample_nearest_forward(const Tensor4& x, std::int64_t factor) {
  if (factor < 1) throw InvalidArgument("upsample factor must be >= 1");
  if (factor == 1) return x;
  const Shape& s = x.shape();
  Tensor4 out(Shape{s.t, s.c, s.w * factor, s.h * factor});
  const Shape& os = out.shape();
  for (std::int64_t t = 0; t < s.t; ++t)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t w = 0; w < os.w; ++w)
        for (std::int64_t h = 0; h < os.h; ++h)
          out(t, c, w, h) = x(t, c, w / factor, h / factor);
  return out;
}

inline Tensor4 upsample_nearest_backward(const Tensor4& grad_out, std::int64_t factor) {
  if (factor < 1) throw InvalidArgument("upsample factor must be >= 1");
  if (factor == 1) return grad_out;
  const Shape& os = grad_out.shape();
  if (os.w % factor != 0 || os.h % factor != 0) {
    throw ShapeMismatch("upsample backward: " + os.str() +
                        " not divisible by factor " + std::to_string(factor));
  }
  Tensor4 g(Shape{os.t, os.c, os.w / factor, os.h / factor}, 0.0);
  for (std::int64_t t = 0; t < os.t; ++t)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t w = 0; w < os.w; ++w)
        for (std::int64_t h = 0; h < os.h; ++h)
          g(t, c, w / factor, h / factor) += grad_out(t, c, w, h);
  return g;
}

}  // namespace normkit
