#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "normkit/errors.hpp"
#include "normkit/generator.hpp"
#include "normkit/io.hpp"
#include "normkit/loss.hpp"
#include "normkit/rng.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

// ---------------------------------------------------------------------------
// Adam.

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor4> m;
  std::map<std::string, Tensor4> v;
  std::int64_t step = 0;
};

namespace detail {

inline void require_aligned(const std::map<std::string, Tensor4>& a,
                            const std::map<std::string, Tensor4>& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeMismatch(std::string("adam_step: ") + what + " entry count differs");
  }
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw ShapeMismatch(std::string("adam_step: ") + what + " name mismatch '" + ia->first +
                          "' vs '" + ib->first + "'");
    }
    if (ia->second.shape() != ib->second.shape()) {
      throw ShapeMismatch(std::string("adam_step: ") + what + " shape mismatch for '" +
                          ia->first + "'");
    }
  }
}

}  // namespace detail

/// Bias-corrected Adam update, applied in place. Moments are created on the
/// first call.
inline void adam_step(std::map<std::string, Tensor4>& params,
                      const std::map<std::string, Tensor4>& grads, AdamState& state,
                      const AdamHyper& hp) {
  detail::require_aligned(params, grads, "gradient");
  if (state.step == 0 && state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace(name, Tensor4(p.shape(), 0.0));
      state.v.emplace(name, Tensor4(p.shape(), 0.0));
    }
  }
  detail::require_aligned(params, state.m, "first moment");
  detail::require_aligned(params, state.v, "second moment");
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto pd = p.data();
    auto gd = grads.at(name).data();
    auto md = state.m.at(name).data();
    auto vd = state.v.at(name).data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = hp.beta1 * md[i] + (1.0 - hp.beta1) * gd[i];
      vd[i] = hp.beta2 * vd[i] + (1.0 - hp.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + hp.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  std::uint64_t seed = 42;
  std::int64_t steps = 200;
  std::int64_t batch_size = 4;
  AdamHyper adam;
  double content_weight = kDefaultContentWeight;
  double style_weight = kDefaultStyleWeight;
  std::vector<std::string> dataset;  // content PPM paths
  std::string style;                 // style PPM path
  GeneratorConfig generator;
  std::uint64_t extractor_seed = 2017;
  std::string extractor_weights;  // optional weight file for the extractor
  std::int64_t log_every = 0;

  void validate() const {
    if (steps < 1) throw InvalidArgument("steps must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(adam.learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be >= 0");
    if (log_every < 0) throw InvalidArgument("log_every must be >= 0");
    generator.validate();
  }

  std::vector<std::pair<std::string, std::string>> echo() const {
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    return {
        {"seed", std::to_string(seed)},
        {"steps", std::to_string(steps)},
        {"batch_size", std::to_string(batch_size)},
        {"learning_rate", num(adam.learning_rate)},
        {"beta1", num(adam.beta1)},
        {"beta2", num(adam.beta2)},
        {"adam_eps", num(adam.eps)},
        {"content_weight", num(content_weight)},
        {"style_weight", num(style_weight)},
        {"norm", to_string(generator.norm_mode)},
        {"padding", to_string(generator.padding_mode)},
        {"base_channels", std::to_string(generator.base_channels)},
        {"residual_blocks", std::to_string(generator.residual_blocks)},
        {"noise_channels", std::to_string(generator.noise_channels)},
        {"norm_eps", num(generator.eps)},
        {"affine", generator.affine ? "1" : "0"},
        {"extractor", extractor_weights.empty()
                          ? "seeded:" + std::to_string(extractor_seed)
                          : "file:" + extractor_weights},
        {"rng", std::string(RngStream::kAlgorithm)},
        {"dataset_size", std::to_string(dataset.size())},
    };
  }
};

struct RunReport {
  std::vector<double> losses;
  double wall_seconds = 0.0;  // not serialized
  std::uint64_t checksum = 0;
  std::vector<std::pair<std::string, std::string>> config;
};

// FNV-1a over names and raw float64 bytes, in name order.
inline std::uint64_t parameter_checksum(const std::map<std::string, Tensor4>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size() * sizeof(double));
  }
  return h;
}

/// `step <i> loss <v>` per line (1-based, %.17g), then a `# config` block of
/// `# <key> <value>` lines ending with the parameter checksum.
inline std::string report_to_text(const RunReport& r) {
  std::string out;
  char buf[96];
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "step %zu loss %.17g\n", i + 1, r.losses[i]);
    out += buf;
  }
  out += "# config\n";
  for (const auto& [k, v] : r.config) out += "# " + k + " " + v + "\n";
  std::snprintf(buf, sizeof buf, "# checksum %016llx\n",
                static_cast<unsigned long long>(r.checksum));
  out += buf;
  return out;
}

inline RunReport parse_run_report(const std::string& text) {
  RunReport r;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    if (line.rfind("step ", 0) == 0) {
      std::istringstream ls(line);
      std::string step_kw, loss_kw;
      std::size_t idx = 0;
      std::string value;
      if (!(ls >> step_kw >> idx >> loss_kw >> value) || loss_kw != "loss" ||
          idx != r.losses.size() + 1) {
        throw FormatError("run report: malformed step line " + std::to_string(line_no), at);
      }
      r.losses.push_back(std::stod(value));
    } else if (line.rfind("# ", 0) == 0) {
      if (line == "# config") continue;
      const auto sp = line.find(' ', 2);
      std::string key = line.substr(2, sp == std::string::npos ? std::string::npos : sp - 2);
      std::string val = sp == std::string::npos ? "" : line.substr(sp + 1);
      if (key == "checksum") {
        r.checksum = std::stoull(val, nullptr, 16);
      } else {
        r.config.emplace_back(std::move(key), std::move(val));
      }
    } else {
      throw FormatError("run report: unexpected line " + std::to_string(line_no), at);
    }
  }
  return r;
}

struct TrainData {
  std::vector<Tensor4> content;  // each (1, 3, W, H), equal sizes
  Tensor4 style;
  FeatureExtractor phi;
};

inline Tensor4 load_image_tensor(const std::string& path) {
  return image_to_tensor(read_ppm(path));
}

inline TrainData load_train_data(const TrainConfig& config) {
  if (config.dataset.empty()) throw InvalidArgument("dataset is empty");
  if (config.style.empty()) throw InvalidArgument("no style image given");
  TrainData data;
  for (const auto& path : config.dataset) {
    Tensor4 t = load_image_tensor(path);
    if (!data.content.empty() && t.shape() != data.content.front().shape()) {
      throw InputError(path, "content image size " + t.shape().str() +
                                 " differs from the first image " +
                                 data.content.front().shape().str());
    }
    data.content.push_back(std::move(t));
  }
  data.style = load_image_tensor(config.style);
  data.phi = config.extractor_weights.empty()
                 ? FeatureExtractor::seeded(config.extractor_seed)
                 : FeatureExtractor::from_tensors(load_weights(config.extractor_weights));
  return data;
}

// Seeded shuffled round-robin over dataset indices.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, RngStream rng) : n_(n), rng_(rng) {}

  std::vector<std::size_t> next(std::int64_t batch) {
    std::vector<std::size_t> out;
    for (std::int64_t i = 0; i < batch; ++i) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = n_; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng_.next_below(i));
      std::swap(order_[i - 1], order_[j]);
    }
    pos_ = 0;
  }

  std::size_t n_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct TrainResult {
  Generator generator;
  RunReport report;
};

// Generator and the sub-streams used by a run, all derived from config.seed.
inline Generator build_for_run(const TrainConfig& config) {
  return Generator::build(config.generator, RngStream(config.seed).split("generator"));
}

using StepCallback = std::function<void(std::int64_t step, const LossResult&)>;

/// Minimizes the batch average of the style/content loss over the generator
/// parameters with Adam. Fresh noise is drawn for every instance at every step.
inline TrainResult train(const TrainConfig& config, const TrainData& data,
                         const StepCallback& on_step = {}) {
  config.validate();
  if (data.content.empty()) throw InvalidArgument("dataset is empty");
  const auto started = std::chrono::steady_clock::now();
  const RngStream root(config.seed);
  Generator g = build_for_run(config);
  BatchSampler sampler(data.content.size(), root.split("batches"));
  RngStream noise = root.split("noise");
  const StyleTarget target =
      make_style_target(data.phi, data.style, config.content_weight, config.style_weight);
  const Shape img = data.content.front().shape();

  AdamState adam;
  RunReport report;
  report.config = config.echo();
  for (std::int64_t step = 1; step <= config.steps; ++step) {
    std::vector<Tensor4> parts;
    for (std::size_t idx : sampler.next(config.batch_size)) parts.push_back(data.content[idx]);
    const Tensor4 x = concat_batch(parts);
    std::optional<Tensor4> z;
    if (config.generator.noise_channels > 0) {
      z = sample_gaussian(noise, Shape{config.batch_size, config.generator.noise_channels,
                                       img.w, img.h});
    }
    GeneratorTape tape;
    const Tensor4 out = g.forward(x, z, Phase::train, &tape);
    const LossResult loss = total_loss(target, data.phi, x, out);
    if (!std::isfinite(loss.loss)) throw Diverged(step);
    report.losses.push_back(loss.loss);
    if (on_step) on_step(step, loss);
    const GeneratorGrads grads = g.backward(loss.grad, tape);
    adam_step(g.params(), grads.params, adam, config.adam);
  }
  report.checksum = parameter_checksum(g.params());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(g), std::move(report)};
}

inline TrainResult train(const TrainConfig& config, const StepCallback& on_step = {}) {
  config.validate();
  return train(config, load_train_data(config), on_step);
}

// Eval-phase generator output for one image with noise drawn from `seed`.
inline Tensor4 stylize(Generator& g, const Tensor4& image, std::uint64_t seed) {
  const Shape& s = image.shape();
  std::optional<Tensor4> z;
  if (g.config().noise_channels > 0) {
    RngStream rng(seed);
    z = sample_gaussian(rng, Shape{s.t, g.config().noise_channels, s.w, s.h});
  }
  return g.forward(image, z, Phase::eval);
}

}  // namespace normkit
