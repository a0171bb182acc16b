#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "normkit/errors.hpp"
#include "normkit/layers.hpp"
#include "normkit/normalization.hpp"
#include "normkit/rng.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

struct GeneratorConfig {
  NormMode norm_mode = NormMode::instance;
  PaddingMode padding_mode = PaddingMode::reflect;
  std::int64_t base_channels = 8;
  std::int64_t residual_blocks = 3;
  std::int64_t noise_channels = 1;
  std::int64_t kernel = 3;
  double eps = kDefaultEps;
  bool affine = false;

  void validate() const {
    if (base_channels < 1) throw InvalidArgument("base_channels must be >= 1");
    if (residual_blocks < 0) throw InvalidArgument("residual_blocks must be >= 0");
    if (noise_channels < 0) throw InvalidArgument("noise_channels must be >= 0");
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("kernel must be odd");
    if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  }
};

enum class LayerKind { conv, norm, relu, upsample, residual, sigmoid };

struct LayerSpec {
  LayerKind kind;
  std::string name;
  std::int64_t stride = 1;   // conv
  std::int64_t factor = 1;   // upsample
  std::vector<LayerSpec> body;  // residual
};

// Per-layer forward state kept for backward.
struct LayerState {
  ConvCache conv;
  NormCache norm;
  ActivationCache act;
  std::vector<LayerState> body;
};

struct GeneratorTape {
  bool valid = false;
  Shape input_shape;  // after noise concatenation
  std::vector<LayerState> layers;
};

struct GeneratorGrads {
  std::map<std::string, Tensor4> params;
  Tensor4 input;  // gradient w.r.t. the concatenated (x, z) input
};

using ParamMap = std::map<std::string, Tensor4>;

/// Encoder / residual / decoder generator g(x, z). Two stride-2 stages down,
/// residual blocks, two nearest-upsample stages back up, sigmoid output.
/// Input spatial dims must be divisible by 4.
class Generator {
 public:
  static Generator build(const GeneratorConfig& config, const RngStream& rng) {
    config.validate();
    Generator g;
    g.config_ = config;
    g.layers_ = skeleton(config);
    const std::int64_t b = config.base_channels;
    const std::int64_t k = config.kernel;
    const bool normed = config.norm_mode != NormMode::none;

    auto add_conv = [&](const std::string& name, std::int64_t cin, std::int64_t cout,
                        bool bias) {
      RngStream stream = rng.split(name + ".weight");
      Tensor4 w = sample_gaussian(stream, Shape{cout, cin, k, k});
      const double std_dev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
      for (double& v : w.data()) v *= std_dev;
      g.params_.emplace(name + ".weight", std::move(w));
      if (bias) g.params_.emplace(name + ".bias", Tensor4(Shape{1, cout, 1, 1}, 0.0));
    };
    auto add_norm = [&](const std::string& name, std::int64_t channels) {
      if (!normed) return;
      if (config.affine) {
        g.params_.emplace(name + ".gamma", Tensor4(Shape{1, channels, 1, 1}, 1.0));
        g.params_.emplace(name + ".beta", Tensor4(Shape{1, channels, 1, 1}, 0.0));
      }
      if (config.norm_mode == NormMode::batch) g.running_.emplace(name, RunningStats{});
    };

    add_conv("enc0", 3 + config.noise_channels, b, !normed);
    add_norm("enc0.norm", b);
    add_conv("down1", b, 2 * b, true);
    add_norm("down1.norm", 2 * b);
    add_conv("down2", 2 * b, 4 * b, true);
    for (std::int64_t r = 0; r < config.residual_blocks; ++r) {
      const std::string p = "res" + std::to_string(r);
      add_conv(p + ".conv1", 4 * b, 4 * b, true);
      add_norm(p + ".norm1", 4 * b);
      add_conv(p + ".conv2", 4 * b, 4 * b, true);
      add_norm(p + ".norm2", 4 * b);
    }
    add_conv("up1", 4 * b, 2 * b, true);
    add_norm("up1.norm", 2 * b);
    add_conv("up2", 2 * b, b, true);
    add_norm("up2.norm", b);
    add_conv("out", b, 3, true);
    return g;
  }

  const GeneratorConfig& config() const { return config_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }

  const ParamMap& params() const { return params_; }
  ParamMap& params() { return params_; }
  const std::map<std::string, RunningStats>& running_stats() const { return running_; }
  std::map<std::string, RunningStats>& running_stats() { return running_; }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  /// x: (T, 3, W, H) in [0, 1]; z: (T, noise_channels, W, H), or nullopt when
  /// noise_channels is 0. Train-phase batch norm updates running statistics.
  Tensor4 forward(const Tensor4& x, const std::optional<Tensor4>& z, Phase phase,
                  GeneratorTape* tape = nullptr) {
    const Shape& s = x.shape();
    if (s.c != 3) throw ShapeMismatch("generator input must have 3 channels, got " + s.str());
    if (s.w % 4 != 0 || s.h % 4 != 0) {
      throw InvalidShape("generator input spatial dims must be divisible by 4, got " + s.str());
    }
    Tensor4 in;
    if (config_.noise_channels > 0) {
      const Shape want{s.t, config_.noise_channels, s.w, s.h};
      if (!z || z->shape() != want) {
        throw ShapeMismatch("generator noise must have shape " + want.str());
      }
      in = concat_channels(x, *z);
    } else {
      if (z) throw ShapeMismatch("generator built without noise channels was given z");
      in = x;
    }
    std::vector<LayerState> states;
    if (tape) states.resize(layers_.size());
    Tensor4 out = run(layers_, std::move(in), phase, tape ? &states : nullptr);
    if (tape) {
      tape->valid = true;
      tape->input_shape = Shape{s.t, 3 + config_.noise_channels, s.w, s.h};
      tape->layers = std::move(states);
    }
    return out;
  }

  // Exact gradients for every parameter; names match params() one-to-one.
  GeneratorGrads backward(const Tensor4& grad_out, const GeneratorTape& tape) const {
    if (!tape.valid) throw MissingForward("generator backward called without forward tape");
    GeneratorGrads grads;
    for (const auto& [name, t] : params_) grads.params.emplace(name, Tensor4(t.shape(), 0.0));
    grads.input = back(layers_, tape.layers, grad_out, grads.params);
    return grads;
  }

  static std::vector<LayerSpec> skeleton(const GeneratorConfig& config) {
    const bool normed = config.norm_mode != NormMode::none;
    std::vector<LayerSpec> L;
    auto conv = [](std::string n, std::int64_t stride = 1) {
      return LayerSpec{LayerKind::conv, std::move(n), stride, 1, {}};
    };
    auto norm = [&](std::vector<LayerSpec>& v, std::string n) {
      if (normed) v.push_back(LayerSpec{LayerKind::norm, std::move(n), 1, 1, {}});
    };
    auto relu = [] { return LayerSpec{LayerKind::relu, "relu", 1, 1, {}}; };

    L.push_back(conv("enc0"));
    norm(L, "enc0.norm");
    L.push_back(relu());
    L.push_back(conv("down1", 2));
    norm(L, "down1.norm");
    L.push_back(relu());
    L.push_back(conv("down2", 2));
    for (std::int64_t r = 0; r < config.residual_blocks; ++r) {
      const std::string p = "res" + std::to_string(r);
      LayerSpec block{LayerKind::residual, p, 1, 1, {}};
      block.body.push_back(conv(p + ".conv1"));
      norm(block.body, p + ".norm1");
      block.body.push_back(relu());
      block.body.push_back(conv(p + ".conv2"));
      norm(block.body, p + ".norm2");
      L.push_back(std::move(block));
    }
    for (const char* stage : {"up1", "up2"}) {
      L.push_back(LayerSpec{LayerKind::upsample, "upsample", 1, 2, {}});
      L.push_back(conv(stage));
      norm(L, std::string(stage) + ".norm");
      L.push_back(relu());
    }
    L.push_back(conv("out"));
    L.push_back(LayerSpec{LayerKind::sigmoid, "sigmoid", 1, 1, {}});
    return L;
  }

 private:
  ConvParams conv_params(const LayerSpec& spec) const {
    ConvParams p;
    p.weight = params_.at(spec.name + ".weight");
    if (auto b = params_.find(spec.name + ".bias"); b != params_.end()) p.bias = b->second;
    p.stride = spec.stride;
    p.padding = config_.padding_mode;
    p.pad = (config_.kernel - 1) / 2;
    return p;
  }

  std::optional<Affine> affine(const std::string& name) const {
    auto g = params_.find(name + ".gamma");
    if (g == params_.end()) return std::nullopt;
    return Affine{g->second, params_.at(name + ".beta")};
  }

  Tensor4 run(const std::vector<LayerSpec>& specs, Tensor4 x, Phase phase,
              std::vector<LayerState>* states) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const LayerSpec& spec = specs[i];
      LayerState* st = states ? &(*states)[i] : nullptr;
      switch (spec.kind) {
        case LayerKind::conv:
          x = conv2d_forward(x, conv_params(spec), st ? &st->conv : nullptr);
          break;
        case LayerKind::norm: {
          const auto aff = affine(spec.name);
          const Affine* ap = aff ? &*aff : nullptr;
          NormCache* nc = st ? &st->norm : nullptr;
          if (config_.norm_mode == NormMode::instance) {
            x = instance_norm_forward(x, config_.eps, nc, ap).first;
          } else {
            x = batch_norm_forward(x, config_.eps, phase, running_.at(spec.name), nc, ap).first;
          }
          break;
        }
        case LayerKind::relu:
          x = relu_forward(x, st ? &st->act : nullptr);
          break;
        case LayerKind::upsample:
          x = upsample_nearest_forward(x, spec.factor);
          break;
        case LayerKind::sigmoid:
          x = sigmoid_forward(x, st ? &st->act : nullptr);
          break;
        case LayerKind::residual: {
          if (st) st->body.resize(spec.body.size());
          Tensor4 y = run(spec.body, x, phase, st ? &st->body : nullptr);
          add_inplace(y, x);
          x = std::move(y);
          break;
        }
      }
    }
    return x;
  }

  static void accumulate(ParamMap& grads, const std::string& name, const Tensor4& g) {
    add_inplace(grads.at(name), g);
  }

  Tensor4 back(const std::vector<LayerSpec>& specs, const std::vector<LayerState>& states,
               Tensor4 g, ParamMap& grads) const {
    if (states.size() != specs.size()) throw MissingForward("generator tape does not match layers");
    for (std::size_t i = specs.size(); i-- > 0;) {
      const LayerSpec& spec = specs[i];
      const LayerState& st = states[i];
      switch (spec.kind) {
        case LayerKind::conv: {
          const ConvParams p = conv_params(spec);
          ConvGrads cg = conv2d_backward(g, st.conv, p);
          accumulate(grads, spec.name + ".weight", cg.weight);
          if (cg.bias) accumulate(grads, spec.name + ".bias", *cg.bias);
          g = std::move(cg.x);
          break;
        }
        case LayerKind::norm: {
          NormGrads ng = config_.norm_mode == NormMode::instance
                             ? instance_norm_backward(g, st.norm)
                             : batch_norm_backward(g, st.norm);
          if (ng.gamma) {
            accumulate(grads, spec.name + ".gamma", *ng.gamma);
            accumulate(grads, spec.name + ".beta", *ng.beta);
          }
          g = std::move(ng.x);
          break;
        }
        case LayerKind::relu:
          g = relu_backward(g, st.act);
          break;
        case LayerKind::upsample:
          g = upsample_nearest_backward(g, spec.factor);
          break;
        case LayerKind::sigmoid:
          g = sigmoid_backward(g, st.act);
          break;
        case LayerKind::residual: {
          Tensor4 inner = back(spec.body, st.body, g, grads);
          add_inplace(g, inner);
          break;
        }
      }
    }
    return g;
  }

  GeneratorConfig config_;
  std::vector<LayerSpec> layers_;
  ParamMap params_;
  std::map<std::string, RunningStats> running_;
};

}  // namespace normkit
