#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "normkit/errors.hpp"
#include "normkit/layers.hpp"
#include "normkit/rng.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

inline constexpr double kDefaultContentWeight = 1.0;
inline constexpr double kDefaultStyleWeight = 10.0;

// Frozen conv -> ReLU stack standing in for a pretrained classifier. Taps are
// 1-based block numbers; a tap's features are that block's ReLU output.
struct FeatureExtractor {
  std::vector<ConvParams> blocks;
  std::vector<int> style_taps{1, 2, 3};
  int content_tap = 3;

  int deepest_tap() const {
    int d = content_tap;
    for (int t : style_taps) d = std::max(d, t);
    return d;
  }

  static constexpr std::int64_t kMinSpatial = 8;

  /// Default architecture: channels 3 -> 8 -> 16 -> 16 -> 16, 3x3 kernels,
  /// reflect padding, stride 2 on the first two blocks. Weights are
  /// fan-in scaled Gaussians drawn from `seed`; biases are omitted unless
  /// `with_bias`, in which case they are small seeded values.
  static FeatureExtractor seeded(std::uint64_t seed, bool with_bias = false) {
    static constexpr std::int64_t channels[] = {3, 8, 16, 16, 16};
    static constexpr std::int64_t strides[] = {2, 2, 1, 1};
    const RngStream root(seed);
    FeatureExtractor phi;
    for (int b = 0; b < 4; ++b) {
      const std::string name = block_name(b + 1);
      RngStream rng = root.split(name + ".weight");
      ConvParams p;
      p.weight = sample_gaussian(rng, Shape{channels[b + 1], channels[b], 3, 3});
      const double std_dev = std::sqrt(2.0 / static_cast<double>(channels[b] * 9));
      for (double& v : p.weight.data()) v *= std_dev;
      if (with_bias) {
        RngStream brng = root.split(name + ".bias");
        p.bias = sample_gaussian(brng, Shape{1, channels[b + 1], 1, 1});
        for (double& v : p.bias->data()) v *= 0.1;
      }
      p.stride = strides[b];
      p.padding = PaddingMode::reflect;
      p.pad = 1;
      phi.blocks.push_back(std::move(p));
    }
    return phi;
  }

  static std::string block_name(int one_based) {
    return "phi.block" + std::to_string(one_based);
  }

  // Blocks named phi.block<N>.weight / .bias; stride and padding follow the
  // default architecture (stride 2 on blocks 1 and 2).
  static FeatureExtractor from_tensors(const std::map<std::string, Tensor4>& named) {
    FeatureExtractor phi;
    for (int b = 1;; ++b) {
      auto w = named.find(block_name(b) + ".weight");
      if (w == named.end()) break;
      ConvParams p;
      p.weight = w->second;
      if (auto bias = named.find(block_name(b) + ".bias"); bias != named.end()) {
        p.bias = bias->second;
      }
      p.stride = b <= 2 ? 2 : 1;
      p.padding = PaddingMode::reflect;
      p.pad = (p.kernel() - 1) / 2;
      phi.blocks.push_back(std::move(p));
    }
    if (static_cast<int>(phi.blocks.size()) < phi.deepest_tap()) {
      throw InvalidArgument("extractor weights define " + std::to_string(phi.blocks.size()) +
                            " blocks, taps need " + std::to_string(phi.deepest_tap()));
    }
    return phi;
  }

  std::map<std::string, Tensor4> to_tensors() const {
    std::map<std::string, Tensor4> named;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string name = block_name(static_cast<int>(b) + 1);
      named.emplace(name + ".weight", blocks[b].weight);
      if (blocks[b].bias) named.emplace(name + ".bias", *blocks[b].bias);
    }
    return named;
  }
};

// Activations of blocks 1..deepest_tap plus what backward needs.
struct Features {
  std::vector<Tensor4> blocks;
  std::vector<ConvCache> conv;
  std::vector<ActivationCache> relu;

  const Tensor4& tap(int one_based) const {
    return blocks.at(static_cast<std::size_t>(one_based - 1));
  }
};

inline Features extract_features(const FeatureExtractor& phi, const Tensor4& x) {
  const Shape& s = x.shape();
  if (s.c != 3) throw InvalidShape("extract_features: expected 3 channels, got " + s.str());
  if (s.w < FeatureExtractor::kMinSpatial || s.h < FeatureExtractor::kMinSpatial) {
    throw InvalidShape("extract_features: spatial dims must be >= 8, got " + s.str());
  }
  const int depth = phi.deepest_tap();
  if (static_cast<int>(phi.blocks.size()) < depth) {
    throw InvalidArgument("extract_features: extractor has too few blocks");
  }
  Features f;
  f.conv.resize(static_cast<std::size_t>(depth));
  f.relu.resize(static_cast<std::size_t>(depth));
  const Tensor4* in = &x;
  for (int b = 0; b < depth; ++b) {
    const auto i = static_cast<std::size_t>(b);
    Tensor4 pre = conv2d_forward(*in, phi.blocks[i], &f.conv[i]);
    f.blocks.push_back(relu_forward(pre, &f.relu[i]));
    in = &f.blocks.back();
  }
  return f;
}

// Gradient w.r.t. the extractor input given gradients at any subset of block
// outputs (indexed 0-based, nullopt where none).
inline Tensor4 extract_features_backward(const FeatureExtractor& phi, const Features& f,
                                         std::vector<std::optional<Tensor4>> block_grads) {
  if (f.blocks.empty()) throw MissingForward("extract_features_backward without forward");
  block_grads.resize(f.blocks.size());
  std::optional<Tensor4> g;
  for (std::size_t b = f.blocks.size(); b-- > 0;) {
    if (block_grads[b]) {
      if (g) {
        add_inplace(*g, *block_grads[b]);
      } else {
        g = std::move(block_grads[b]);
      }
    }
    if (!g) continue;
    Tensor4 pre = relu_backward(*g, f.relu[b]);
    g = conv2d_backward(pre, f.conv[b], phi.blocks[b], /*param_grads=*/false).x;
  }
  if (!g) return Tensor4(f.conv.front().input_shape, 0.0);
  return *g;
}

// ---------------------------------------------------------------------------
// Gram matrices.

struct GramMatrix {
  std::int64_t n = 0;
  std::vector<double> v;

  double operator()(std::int64_t i, std::int64_t j) const {
    return v[static_cast<std::size_t>(i * n + j)];
  }
  bool operator==(const GramMatrix&) const = default;
};

/// G_ij = (1 / (W*H)) * sum over sites of F_i * F_j, single instance only.
inline GramMatrix gram(const Tensor4& f) {
  const Shape& s = f.shape();
  if (s.t != 1) throw InvalidShape("gram: expected a single instance, got " + s.str());
  GramMatrix g{s.c, std::vector<double>(static_cast<std::size_t>(s.c * s.c), 0.0)};
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::int64_t i = 0; i < s.c; ++i) {
    auto fi = f.plane(0, i);
    for (std::int64_t j = 0; j < s.c; ++j) {
      auto fj = f.plane(0, j);
      double acc = 0.0;
      for (std::size_t k = 0; k < fi.size(); ++k) acc += fi[k] * fj[k];
      g.v[static_cast<std::size_t>(i * s.c + j)] = acc * inv;
    }
  }
  return g;
}

// dF_i = (1 / (W*H)) * sum_j (dG_ij + dG_ji) F_j
inline Tensor4 gram_backward(const Tensor4& f, const GramMatrix& dg) {
  const Shape& s = f.shape();
  if (dg.n != s.c) throw ShapeMismatch("gram_backward: matrix size vs channels");
  Tensor4 out(s, 0.0);
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::int64_t i = 0; i < s.c; ++i) {
    auto dst = out.plane(0, i);
    for (std::int64_t j = 0; j < s.c; ++j) {
      const double c = (dg(i, j) + dg(j, i)) * inv;
      auto fj = f.plane(0, j);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += c * fj[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Style/content objective.

struct StyleTarget {
  std::vector<GramMatrix> grams;  // one per style tap, in tap order
  double content_weight = kDefaultContentWeight;
  double style_weight = kDefaultStyleWeight;
};

inline StyleTarget make_style_target(const FeatureExtractor& phi, const Tensor4& style,
                                     double content_weight = kDefaultContentWeight,
                                     double style_weight = kDefaultStyleWeight) {
  if (style.shape().t != 1) throw InvalidShape("style image must be a single instance");
  const Features f = extract_features(phi, style);
  StyleTarget target{{}, content_weight, style_weight};
  for (int tap : phi.style_taps) target.grams.push_back(gram(f.tap(tap)));
  return target;
}

struct LossResult {
  double loss = 0.0;
  double content = 0.0;  // alpha * content term
  double style = 0.0;    // beta * style term
  Tensor4 grad;          // d loss / d output
};

// Single-instance loss and gradient.
inline LossResult instance_loss(const StyleTarget& target, const FeatureExtractor& phi,
                                const Features& content_f, const Tensor4& output) {
  const Features out_f = extract_features(phi, output);
  std::vector<std::optional<Tensor4>> grads(out_f.blocks.size());
  auto accumulate = [&](int tap, Tensor4 g) {
    auto& slot = grads[static_cast<std::size_t>(tap - 1)];
    if (slot) {
      add_inplace(*slot, g);
    } else {
      slot = std::move(g);
    }
  };

  // Content: mean squared feature difference at the content tap.
  const Tensor4& fo = out_f.tap(phi.content_tap);
  const Tensor4& fc = content_f.tap(phi.content_tap);
  const double n_content = static_cast<double>(fo.size());
  Tensor4 diff = sub(fo, fc);
  double content_sq = 0.0;
  for (double v : diff.data()) content_sq += v * v;
  const double content_term = content_sq / n_content;
  if (target.content_weight != 0.0) {
    accumulate(phi.content_tap, scale(diff, 2.0 * target.content_weight / n_content));
  }

  // Style: mean squared Gram difference per tap, averaged over taps.
  if (target.grams.size() != phi.style_taps.size()) {
    throw ShapeMismatch("style target has " + std::to_string(target.grams.size()) +
                        " grams for " + std::to_string(phi.style_taps.size()) + " taps");
  }
  const double n_taps = static_cast<double>(phi.style_taps.size());
  double style_term = 0.0;
  for (std::size_t k = 0; k < phi.style_taps.size(); ++k) {
    const Tensor4& f = out_f.tap(phi.style_taps[k]);
    const GramMatrix g = gram(f);
    const GramMatrix& tgt = target.grams[k];
    if (tgt.n != g.n) throw ShapeMismatch("style target Gram size mismatch");
    const double n_entries = static_cast<double>(g.v.size());
    GramMatrix dg{g.n, std::vector<double>(g.v.size())};
    double sq = 0.0;
    for (std::size_t e = 0; e < g.v.size(); ++e) {
      const double d = g.v[e] - tgt.v[e];
      sq += d * d;
      dg.v[e] = 2.0 * target.style_weight * d / (n_entries * n_taps);
    }
    style_term += sq / n_entries;
    if (target.style_weight != 0.0) accumulate(phi.style_taps[k], gram_backward(f, dg));
  }
  style_term /= n_taps;

  LossResult r;
  r.content = target.content_weight * content_term;
  r.style = target.style_weight * style_term;
  r.loss = r.content + r.style;
  r.grad = extract_features_backward(phi, out_f, std::move(grads));
  return r;
}

/// Batch loss: the average over instances of the per-instance loss, with the
/// gradient of that average w.r.t. `output`.
inline LossResult total_loss(const StyleTarget& target, const FeatureExtractor& phi,
                             const Tensor4& content, const Tensor4& output) {
  require_same_shape(content, output, "total_loss");
  if (output.shape().c != 3) throw ShapeMismatch("total_loss: expected 3 channels");
  const std::int64_t n = output.shape().t;
  LossResult total;
  std::vector<Tensor4> grads;
  for (std::int64_t t = 0; t < n; ++t) {
    const Features cf = extract_features(phi, slice_batch(content, t, 1));
    LossResult r = instance_loss(target, phi, cf, slice_batch(output, t, 1));
    total.loss += r.loss;
    total.content += r.content;
    total.style += r.style;
    grads.push_back(scale(r.grad, 1.0 / static_cast<double>(n)));
  }
  const double inv = 1.0 / static_cast<double>(n);
  total.loss *= inv;
  total.content *= inv;
  total.style *= inv;
  total.grad = concat_batch(grads);
  return total;
}

}  // namespace normkit
