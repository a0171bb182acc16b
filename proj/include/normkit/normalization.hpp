#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "normkit/errors.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

enum class NormMode { none, batch, instance };
enum class Phase { train, eval };

inline const char* to_string(NormMode m) {
  switch (m) {
    case NormMode::none: return "none";
    case NormMode::batch: return "batch";
    case NormMode::instance: return "instance";
  }
  return "?";
}

inline constexpr double kDefaultEps = 1e-5;
inline constexpr double kDefaultMomentum = 0.1;
inline constexpr double kContrastSumFloor = 1e-12;

// Mean and biased variance per reduction group: one group per channel for
// batch norm, one per (instance, channel) pair for instance norm.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> var;
  double eps = kDefaultEps;
};

// Batch-norm statistics frozen for evaluation. Only train-mode batch norm
// updates them.
struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = kDefaultMomentum;
  std::int64_t sample_count = 0;
};

// Optional per-channel scale and shift, shapes (1, C, 1, 1).
struct Affine {
  Tensor4 gamma;
  Tensor4 beta;

  static Affine identity(std::int64_t channels) {
    return {Tensor4(Shape{1, channels, 1, 1}, 1.0), Tensor4(Shape{1, channels, 1, 1}, 0.0)};
  }
};

struct NormCache {
  bool valid = false;
  bool per_instance = false;
  bool frozen = false;  // batch norm evaluated with running statistics
  Tensor4 xhat;
  std::vector<double> inv_std;  // per group
  std::optional<Tensor4> gamma;
  NormStats stats;
};

struct NormGrads {
  Tensor4 x;
  std::optional<Tensor4> gamma;
  std::optional<Tensor4> beta;
};

/// Divides every (t, i) plane by its spatial sum. No mean subtraction and
/// no epsilon; a plane whose sum has magnitude <= 1e-12 is rejected.
inline Tensor4 contrast_norm(const Tensor4& x) {
  const Shape& s = x.shape();
  Tensor4 out(s);
  for (std::int64_t t = 0; t < s.t; ++t)
    for (std::int64_t c = 0; c < s.c; ++c) {
      auto src = x.plane(t, c);
      double sum = 0.0;
      for (double v : src) sum += v;
      if (!(std::abs(sum) > kContrastSumFloor)) {
        throw DegenerateInput("contrast_norm: plane (t=" + std::to_string(t) +
                              ", i=" + std::to_string(c) + ") sums to " +
                              std::to_string(sum));
      }
      auto dst = out.plane(t, c);
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k] / sum;
    }
  return out;
}

namespace detail {

inline void check_affine(const Affine* affine, std::int64_t channels) {
  if (!affine) return;
  const Shape want{1, channels, 1, 1};
  if (affine->gamma.shape() != want || affine->beta.shape() != want) {
    throw ShapeMismatch("affine parameters must have shape " + want.str());
  }
}

// Normalizes group `g` spanning the planes in `planes` with the given mean
// and variance, writing xhat and y.
inline void normalize_planes(const Tensor4& x, Tensor4& xhat, Tensor4& y,
                             const std::vector<std::pair<std::int64_t, std::int64_t>>& planes,
                             double mean, double inv_std, double gamma, double beta) {
  for (auto [t, c] : planes) {
    auto src = x.plane(t, c);
    auto xh = xhat.plane(t, c);
    auto dst = y.plane(t, c);
    for (std::size_t k = 0; k < src.size(); ++k) {
      xh[k] = (src[k] - mean) * inv_std;
      dst[k] = gamma * xh[k] + beta;
    }
  }
}

inline std::pair<double, double> group_moments(
    const Tensor4& x, const std::vector<std::pair<std::int64_t, std::int64_t>>& planes) {
  double sum = 0.0;
  std::int64_t n = 0;
  for (auto [t, c] : planes) {
    for (double v : x.plane(t, c)) sum += v;
    n += x.shape().plane();
  }
  double mean = sum / static_cast<double>(n);
  // One correction pass; makes the mean of a constant group exact, so a
  // constant input normalizes to exact zeros.
  double resid = 0.0;
  for (auto [t, c] : planes) {
    for (double v : x.plane(t, c)) resid += v - mean;
  }
  mean += resid / static_cast<double>(n);
  double sq = 0.0;
  for (auto [t, c] : planes) {
    for (double v : x.plane(t, c)) sq += (v - mean) * (v - mean);
  }
  return {mean, sq / static_cast<double>(n)};
}

inline std::vector<std::pair<std::int64_t, std::int64_t>> channel_planes(
    const Shape& s, std::int64_t c) {
  std::vector<std::pair<std::int64_t, std::int64_t>> planes;
  planes.reserve(static_cast<std::size_t>(s.t));
  for (std::int64_t t = 0; t < s.t; ++t) planes.emplace_back(t, c);
  return planes;
}

}  // namespace detail

/// Instance normalization: per (t, i) mean and biased variance over W and H.
/// Behaves the same in training and evaluation.
inline std::pair<Tensor4, NormStats> instance_norm_forward(
    const Tensor4& x, double eps = kDefaultEps, NormCache* cache = nullptr,
    const Affine* affine = nullptr) {
  if (!(eps > 0.0)) throw InvalidArgument("instance_norm: eps must be positive");
  const Shape& s = x.shape();
  detail::check_affine(affine, s.c);
  Tensor4 y(s);
  Tensor4 xhat(s);
  NormStats stats{{}, {}, eps};
  std::vector<double> inv_std;
  for (std::int64_t t = 0; t < s.t; ++t)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const std::vector<std::pair<std::int64_t, std::int64_t>> planes{{t, c}};
      auto [mean, var] = detail::group_moments(x, planes);
      const double is = 1.0 / std::sqrt(var + eps);
      detail::normalize_planes(x, xhat, y, planes, mean, is,
                               affine ? affine->gamma[c] : 1.0,
                               affine ? affine->beta[c] : 0.0);
      stats.mean.push_back(mean);
      stats.var.push_back(var);
      inv_std.push_back(is);
    }
  if (cache) {
    *cache = NormCache{true, true, false, std::move(xhat), std::move(inv_std),
                       affine ? std::optional<Tensor4>(affine->gamma) : std::nullopt,
                       stats};
  }
  return {std::move(y), std::move(stats)};
}

/// Batch normalization: per-channel statistics over T, W and H in training
/// (running statistics updated with momentum); running statistics in eval.
inline std::pair<Tensor4, NormStats> batch_norm_forward(
    const Tensor4& x, double eps, Phase phase, RunningStats& rs,
    NormCache* cache = nullptr, const Affine* affine = nullptr) {
  if (!(eps > 0.0)) throw InvalidArgument("batch_norm: eps must be positive");
  const Shape& s = x.shape();
  detail::check_affine(affine, s.c);
  if (phase == Phase::eval) {
    if (rs.sample_count <= 0) {
      throw NotCalibrated("batch_norm: eval mode before any training batch");
    }
    if (static_cast<std::int64_t>(rs.mean.size()) != s.c) {
      throw ShapeMismatch("batch_norm: running stats sized for " +
                          std::to_string(rs.mean.size()) + " channels");
    }
  }
  Tensor4 y(s);
  Tensor4 xhat(s);
  NormStats stats{{}, {}, eps};
  std::vector<double> inv_std;
  for (std::int64_t c = 0; c < s.c; ++c) {
    const auto planes = detail::channel_planes(s, c);
    double mean;
    double var;
    if (phase == Phase::train) {
      std::tie(mean, var) = detail::group_moments(x, planes);
    } else {
      mean = rs.mean[static_cast<std::size_t>(c)];
      var = rs.var[static_cast<std::size_t>(c)];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    detail::normalize_planes(x, xhat, y, planes, mean, is,
                             affine ? affine->gamma[c] : 1.0,
                             affine ? affine->beta[c] : 0.0);
    stats.mean.push_back(mean);
    stats.var.push_back(var);
    inv_std.push_back(is);
  }
  if (phase == Phase::train) {
    if (static_cast<std::int64_t>(rs.mean.size()) != s.c) {
      rs.mean.assign(static_cast<std::size_t>(s.c), 0.0);
      rs.var.assign(static_cast<std::size_t>(s.c), 1.0);
      rs.sample_count = 0;
    }
    const double m = rs.momentum;
    for (std::size_t c = 0; c < rs.mean.size(); ++c) {
      rs.mean[c] = (1.0 - m) * rs.mean[c] + m * stats.mean[c];
      rs.var[c] = (1.0 - m) * rs.var[c] + m * stats.var[c];
    }
    rs.sample_count += s.t;
  }
  if (cache) {
    *cache = NormCache{true, false, phase == Phase::eval, std::move(xhat),
                       std::move(inv_std),
                       affine ? std::optional<Tensor4>(affine->gamma) : std::nullopt,
                       stats};
  }
  return {std::move(y), std::move(stats)};
}

namespace detail {

inline NormGrads norm_backward(const Tensor4& grad_out, const NormCache& cache) {
  if (!cache.valid) throw MissingForward("normalization backward called without forward cache");
  require_same_shape(grad_out, cache.xhat, "norm backward");
  const Shape& s = grad_out.shape();
  NormGrads g{Tensor4(s), std::nullopt, std::nullopt};
  if (cache.gamma) {
    Tensor4 gg(Shape{1, s.c, 1, 1}, 0.0);
    Tensor4 gb(Shape{1, s.c, 1, 1}, 0.0);
    for (std::int64_t c = 0; c < s.c; ++c) {
      double a = 0.0;
      double b = 0.0;
      for (std::int64_t t = 0; t < s.t; ++t) {
        auto go = grad_out.plane(t, c);
        auto xh = cache.xhat.plane(t, c);
        for (std::size_t k = 0; k < go.size(); ++k) {
          a += go[k] * xh[k];
          b += go[k];
        }
      }
      gg[c] = a;
      gb[c] = b;
    }
    g.gamma = std::move(gg);
    g.beta = std::move(gb);
  }

  auto group_backward = [&](const std::vector<std::pair<std::int64_t, std::int64_t>>& planes,
                            std::int64_t c, double inv_std) {
    const double gamma = cache.gamma ? (*cache.gamma)[c] : 1.0;
    if (cache.frozen) {
      for (auto [t, ch] : planes) {
        auto go = grad_out.plane(t, ch);
        auto dst = g.x.plane(t, ch);
        for (std::size_t k = 0; k < go.size(); ++k) dst[k] = gamma * go[k] * inv_std;
      }
      return;
    }
    // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)), g = gamma * grad_out.
    double sum_g = 0.0;
    double sum_gx = 0.0;
    std::int64_t n = 0;
    for (auto [t, ch] : planes) {
      auto go = grad_out.plane(t, ch);
      auto xh = cache.xhat.plane(t, ch);
      for (std::size_t k = 0; k < go.size(); ++k) {
        sum_g += gamma * go[k];
        sum_gx += gamma * go[k] * xh[k];
      }
      n += s.plane();
    }
    const double mean_g = sum_g / static_cast<double>(n);
    const double mean_gx = sum_gx / static_cast<double>(n);
    for (auto [t, ch] : planes) {
      auto go = grad_out.plane(t, ch);
      auto xh = cache.xhat.plane(t, ch);
      auto dst = g.x.plane(t, ch);
      for (std::size_t k = 0; k < go.size(); ++k) {
        dst[k] = inv_std * (gamma * go[k] - mean_g - xh[k] * mean_gx);
      }
    }
  };

  if (cache.per_instance) {
    for (std::int64_t t = 0; t < s.t; ++t)
      for (std::int64_t c = 0; c < s.c; ++c)
        group_backward({{t, c}}, c, cache.inv_std[static_cast<std::size_t>(t * s.c + c)]);
  } else {
    for (std::int64_t c = 0; c < s.c; ++c)
      group_backward(channel_planes(s, c), c, cache.inv_std[static_cast<std::size_t>(c)]);
  }
  return g;
}

}  // namespace detail

inline NormGrads instance_norm_backward(const Tensor4& grad_out, const NormCache& cache) {
  if (cache.valid && !cache.per_instance) {
    throw InvalidArgument("instance_norm_backward given a batch-norm cache");
  }
  return detail::norm_backward(grad_out, cache);
}

// Eval-mode caches treat the running statistics as constants.
inline NormGrads batch_norm_backward(const Tensor4& grad_out, const NormCache& cache) {
  if (cache.valid && cache.per_instance) {
    throw InvalidArgument("batch_norm_backward given an instance-norm cache");
  }
  return detail::norm_backward(grad_out, cache);
}

}  // namespace normkit
