#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "normkit/errors.hpp"
#include "normkit/generator.hpp"
#include "normkit/layers.hpp"
#include "normkit/loss.hpp"
#include "normkit/normalization.hpp"
#include "normkit/rng.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct GradcheckEntry {
  std::string subject;
  std::string group;  // which gradient: x, weight, bias, gamma, ...
  std::int64_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tol) const { return max_error() < tol; }
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double h = 1e-5;
  std::int64_t sampled_params = 20;  // generator subjects only
};

// Compares `analytic` against central differences of `f` with respect to
// the elements `indices` of `target` (all elements when empty).
inline GradcheckEntry check_tensor(const std::string& subject, const std::string& group,
                                   Tensor4& target, const Tensor4& analytic,
                                   const std::function<double()>& f, double h,
                                   const std::vector<std::int64_t>& indices = {}) {
  GradcheckEntry e{subject, group, 0, 0.0};
  auto one = [&](std::int64_t i) {
    const double saved = target[i];
    target[i] = saved + h;
    const double fp = f();
    target[i] = saved - h;
    const double fm = f();
    target[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], numeric));
    ++e.checked;
  };
  if (indices.empty()) {
    for (std::int64_t i = 0; i < target.size(); ++i) one(i);
  } else {
    for (std::int64_t i : indices) one(i);
  }
  return e;
}

namespace detail {

// Probe objective f(y) = <u, y> + |y|^2 / 2, gradient u + y.
struct Probe {
  Tensor4 u;
  double value(const Tensor4& y) const { return dot(u, y) + 0.5 * dot(y, y); }
  Tensor4 grad(const Tensor4& y) const { return add(u, y); }
};

inline Probe make_probe(RngStream& rng, const Shape& s) { return {sample_gaussian(rng, s)}; }

// Moves entries within `band` of zero away from it (keeps ReLU kinks clear
// of the finite-difference stencil).
inline void clear_of_zero(Tensor4& x, double band) {
  for (double& v : x.data()) {
    if (std::abs(v) < band) v = v < 0.0 ? v - 2.0 * band : v + 2.0 * band;
  }
}

inline GradcheckReport check_conv(const std::string& subject, PaddingMode mode,
                                  std::int64_t stride, const GradcheckOptions& o) {
  RngStream rng(o.seed);
  Tensor4 x = sample_gaussian(rng, Shape{1, 2, 4, 4});
  ConvParams p;
  p.weight = sample_gaussian(rng, Shape{3, 2, 3, 3});
  p.bias = sample_gaussian(rng, Shape{1, 3, 1, 1});
  p.stride = stride;
  p.padding = mode;
  p.pad = 1;
  ConvCache cache;
  const Tensor4 y = conv2d_forward(x, p, &cache);
  const Probe probe = make_probe(rng, y.shape());
  const ConvGrads g = conv2d_backward(probe.grad(y), cache, p);
  auto f = [&] { return probe.value(conv2d_forward(x, p)); };
  GradcheckReport r;
  r.entries.push_back(check_tensor(subject, "x", x, g.x, f, o.h));
  r.entries.push_back(check_tensor(subject, "weight", p.weight, g.weight, f, o.h));
  r.entries.push_back(check_tensor(subject, "bias", *p.bias, *g.bias, f, o.h));
  return r;
}

inline GradcheckReport check_activation(const std::string& subject, bool relu,
                                        const GradcheckOptions& o) {
  RngStream rng(o.seed);
  Tensor4 x = sample_gaussian(rng, Shape{2, 2, 3, 3});
  if (relu) clear_of_zero(x, 1e-3);
  ActivationCache cache;
  const Tensor4 y = relu ? relu_forward(x, &cache) : sigmoid_forward(x, &cache);
  const Probe probe = make_probe(rng, y.shape());
  const Tensor4 gx = relu ? relu_backward(probe.grad(y), cache)
                          : sigmoid_backward(probe.grad(y), cache);
  auto f = [&] { return probe.value(relu ? relu_forward(x) : sigmoid_forward(x)); };
  return {{check_tensor(subject, "x", x, gx, f, o.h)}};
}

inline GradcheckReport check_upsample(const GradcheckOptions& o) {
  RngStream rng(o.seed);
  Tensor4 x = sample_gaussian(rng, Shape{1, 2, 3, 3});
  const Tensor4 y = upsample_nearest_forward(x, 2);
  const Probe probe = make_probe(rng, y.shape());
  const Tensor4 gx = upsample_nearest_backward(probe.grad(y), 2);
  auto f = [&] { return probe.value(upsample_nearest_forward(x, 2)); };
  return {{check_tensor("upsample", "x", x, gx, f, o.h)}};
}

inline GradcheckReport check_norm(const std::string& subject, NormMode mode, Phase phase,
                                  const GradcheckOptions& o) {
  RngStream rng(o.seed);
  Tensor4 x = sample_gaussian(rng, Shape{2, 2, 3, 3});
  Affine affine{sample_gaussian(rng, Shape{1, 2, 1, 1}), sample_gaussian(rng, Shape{1, 2, 1, 1})};
  RunningStats calibrated;
  if (phase == Phase::eval) {
    batch_norm_forward(sample_gaussian(rng, x.shape()), kDefaultEps, Phase::train, calibrated);
  }
  auto run = [&](NormCache* cache) {
    if (mode == NormMode::instance) return instance_norm_forward(x, kDefaultEps, cache, &affine).first;
    RunningStats rs = calibrated;
    return batch_norm_forward(x, kDefaultEps, phase, rs, cache, &affine).first;
  };
  NormCache cache;
  const Tensor4 y = run(&cache);
  const Probe probe = make_probe(rng, y.shape());
  const NormGrads g = mode == NormMode::instance ? instance_norm_backward(probe.grad(y), cache)
                                                 : batch_norm_backward(probe.grad(y), cache);
  auto f = [&] { return probe.value(run(nullptr)); };
  GradcheckReport r;
  r.entries.push_back(check_tensor(subject, "x", x, g.x, f, o.h));
  r.entries.push_back(check_tensor(subject, "gamma", affine.gamma, *g.gamma, f, o.h));
  r.entries.push_back(check_tensor(subject, "beta", affine.beta, *g.beta, f, o.h));
  return r;
}

inline GradcheckReport check_gram(const GradcheckOptions& o) {
  RngStream rng(o.seed);
  Tensor4 x = sample_gaussian(rng, Shape{1, 3, 4, 4});
  const GramMatrix target = gram(sample_gaussian(rng, x.shape()));
  auto value = [&](const GramMatrix& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      const double d = g.v[i] - target.v[i];
      s += d * d;
    }
    return s;
  };
  const GramMatrix g = gram(x);
  GramMatrix dg{g.n, std::vector<double>(g.v.size())};
  for (std::size_t i = 0; i < g.v.size(); ++i) dg.v[i] = 2.0 * (g.v[i] - target.v[i]);
  const Tensor4 gx = gram_backward(x, dg);
  auto f = [&] { return value(gram(x)); };
  return {{check_tensor("gram", "x", x, gx, f, o.h)}};
}

inline GradcheckReport check_loss(const GradcheckOptions& o) {
  RngStream rng(o.seed);
  const FeatureExtractor phi = FeatureExtractor::seeded(o.seed + 1000);
  const StyleTarget target =
      make_style_target(phi, sample_uniform(rng, Shape{1, 3, 16, 16}));
  const Tensor4 content = sample_uniform(rng, Shape{1, 3, 16, 16});
  Tensor4 output = sample_uniform(rng, Shape{1, 3, 16, 16});
  const LossResult r = total_loss(target, phi, content, output);
  auto f = [&] { return total_loss(target, phi, content, output).loss; };
  return {{check_tensor("loss", "output", output, r.grad, f, o.h)}};
}

inline GradcheckReport check_generator(const std::string& subject, NormMode mode,
                                       const GradcheckOptions& o) {
  RngStream rng(o.seed);
  GeneratorConfig cfg;
  cfg.norm_mode = mode;
  Generator g = Generator::build(cfg, rng.split("generator"));
  const FeatureExtractor phi = FeatureExtractor::seeded(o.seed + 1000);
  const StyleTarget target = make_style_target(phi, sample_uniform(rng, Shape{1, 3, 16, 16}));
  const std::int64_t batch = mode == NormMode::batch ? 2 : 1;
  const Tensor4 x = sample_uniform(rng, Shape{batch, 3, 8, 8});
  const Tensor4 z = sample_gaussian(rng, Shape{batch, cfg.noise_channels, 8, 8});

  GeneratorTape tape;
  const Tensor4 out = g.forward(x, z, Phase::train, &tape);
  const LossResult loss = total_loss(target, phi, x, out);
  const GeneratorGrads grads = g.backward(loss.grad, tape);
  auto f = [&] { return total_loss(target, phi, x, g.forward(x, z, Phase::train)).loss; };

  // Sample parameter elements uniformly over the flattened parameter set.
  std::vector<std::pair<std::string, std::int64_t>> flat;
  for (const auto& [name, t] : g.params())
    for (std::int64_t i = 0; i < t.size(); ++i) flat.emplace_back(name, i);
  RngStream pick = rng.split("sample");
  GradcheckEntry total{subject, "params", 0, 0.0};
  for (std::int64_t k = 0; k < o.sampled_params; ++k) {
    const auto& [name, i] = flat[pick.next_below(flat.size())];
    const GradcheckEntry e =
        check_tensor(subject, name, g.params().at(name), grads.params.at(name), f, o.h, {i});
    total.max_rel_error = std::max(total.max_rel_error, e.max_rel_error);
    total.checked += e.checked;
  }
  return {{total}};
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_subjects() {
  static const std::vector<std::string> names{
      "conv_zero",  "conv_reflect",    "conv_stride2", "relu",          "sigmoid",
      "upsample",   "batch_norm",      "batch_norm_eval", "instance_norm", "gram",
      "loss",       "generator_instance", "generator_batch"};
  return names;
}

/// Central-difference check of one subject (or "all"). Relative error is
/// |a - n| / max(|a|, |n|, 1e-8); pass/fail is left to the caller.
inline GradcheckReport gradcheck(const std::string& subject, const GradcheckOptions& o = {}) {
  if (!(o.h > 0.0)) throw InvalidArgument("gradcheck: h must be positive");
  if (subject == "all") {
    GradcheckReport all;
    for (const auto& s : gradcheck_subjects()) {
      auto r = gradcheck(s, o);
      all.entries.insert(all.entries.end(), r.entries.begin(), r.entries.end());
    }
    return all;
  }
  if (subject == "conv_zero") return detail::check_conv(subject, PaddingMode::zero, 1, o);
  if (subject == "conv_reflect") return detail::check_conv(subject, PaddingMode::reflect, 1, o);
  if (subject == "conv_stride2") return detail::check_conv(subject, PaddingMode::reflect, 2, o);
  if (subject == "relu") return detail::check_activation(subject, true, o);
  if (subject == "sigmoid") return detail::check_activation(subject, false, o);
  if (subject == "upsample") return detail::check_upsample(o);
  if (subject == "batch_norm") return detail::check_norm(subject, NormMode::batch, Phase::train, o);
  if (subject == "batch_norm_eval") {
    return detail::check_norm(subject, NormMode::batch, Phase::eval, o);
  }
  if (subject == "instance_norm") {
    return detail::check_norm(subject, NormMode::instance, Phase::train, o);
  }
  if (subject == "gram") return detail::check_gram(o);
  if (subject == "loss") return detail::check_loss(o);
  if (subject == "generator_instance") {
    return detail::check_generator(subject, NormMode::instance, o);
  }
  if (subject == "generator_batch") return detail::check_generator(subject, NormMode::batch, o);
  throw InvalidArgument("gradcheck: unknown subject '" + subject + "'");
}

}  // namespace normkit
