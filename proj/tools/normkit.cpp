// normkit command-line front end: train, stylize, compare-norms, gradcheck,
// synth. Exit codes: 0 ok, 1 check failure, 2 usage, 3 input, 4 divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "normkit/normkit.hpp"

namespace {

using namespace normkit;

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kInput = 3, kDiverged = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataFlags {
  std::string style;
  std::string content_dir;
  std::string norm = "instance";
  std::string padding = "reflect";
  std::int64_t steps = 200;
  std::uint64_t seed = 42;
  std::int64_t batch_size = 4;
  double learning_rate = 1e-3;
  double content_weight = kDefaultContentWeight;
  double style_weight = kDefaultStyleWeight;
  std::int64_t base_channels = 8;
  std::int64_t residual_blocks = 3;
  std::int64_t noise_channels = 1;
  bool affine = false;
  std::uint64_t extractor_seed = 2017;
  std::string extractor;
  std::int64_t log_every = 0;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool with_norm) {
  cmd->add_option("--style", f.style, "Style image (PPM P6)")->required();
  cmd->add_option("--content-dir", f.content_dir, "Directory of content PPM images")->required();
  if (with_norm) {
    cmd->add_option("--norm", f.norm, "Normalization in the generator")
        ->check(CLI::IsMember({"instance", "batch", "none"}));
  }
  cmd->add_option("--padding", f.padding, "Convolution padding")
      ->check(CLI::IsMember({"zero", "reflect"}));
  cmd->add_option("--steps", f.steps, "Optimization steps (>= 1)");
  cmd->add_option("--seed", f.seed, "Run seed");
  cmd->add_option("--batch-size", f.batch_size, "Images per step");
  cmd->add_option("--lr", f.learning_rate, "Adam learning rate");
  cmd->add_option("--content-weight", f.content_weight, "Content loss weight (alpha)");
  cmd->add_option("--style-weight", f.style_weight, "Style loss weight (beta)");
  cmd->add_option("--base-channels", f.base_channels, "Generator width");
  cmd->add_option("--residual-blocks", f.residual_blocks, "Generator residual blocks");
  cmd->add_option("--noise-channels", f.noise_channels, "Noise channels concatenated to input");
  cmd->add_flag("--affine", f.affine, "Learnable scale/shift after each normalization");
  cmd->add_option("--extractor-seed", f.extractor_seed, "Seed of the random feature extractor");
  cmd->add_option("--extractor", f.extractor, "Feature extractor weight file");
  cmd->add_option("--log-every", f.log_every, "Print the loss every N steps (0 = quiet)");
}

TrainConfig to_config(const DataFlags& f) {
  if (f.steps < 1) throw UsageError("--steps must be >= 1");
  if (f.batch_size < 1) throw UsageError("--batch-size must be >= 1");
  if (!(f.learning_rate > 0.0)) throw UsageError("--lr must be positive");
  if (f.log_every < 0) throw UsageError("--log-every must be >= 0");
  TrainConfig c;
  c.seed = f.seed;
  c.steps = f.steps;
  c.batch_size = f.batch_size;
  c.adam.learning_rate = f.learning_rate;
  c.content_weight = f.content_weight;
  c.style_weight = f.style_weight;
  c.style = f.style;
  c.generator.norm_mode = f.norm == "batch"      ? NormMode::batch
                          : f.norm == "instance" ? NormMode::instance
                                                 : NormMode::none;
  c.generator.padding_mode = f.padding == "zero" ? PaddingMode::zero : PaddingMode::reflect;
  c.generator.base_channels = f.base_channels;
  c.generator.residual_blocks = f.residual_blocks;
  c.generator.noise_channels = f.noise_channels;
  c.generator.affine = f.affine;
  c.extractor_seed = f.extractor_seed;
  c.extractor_weights = f.extractor;
  c.log_every = f.log_every;
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return c;
}

StepCallback progress(const TrainConfig& c, const std::string& tag) {
  if (c.log_every == 0) return {};
  return [every = c.log_every, tag](std::int64_t step, const LossResult& l) {
    if (step % every == 0 || step == 1) {
      std::fprintf(stderr, "%sstep %lld loss %.6g (content %.6g, style %.6g)\n", tag.c_str(),
                   static_cast<long long>(step), l.loss, l.content, l.style);
    }
  };
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void require_divisible(const ImageRGB& img, const std::string& path) {
  if (img.width % 4 != 0 || img.height % 4 != 0) {
    throw InputError(path, "image is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) +
                               "; width and height must be divisible by 4");
  }
}

int cmd_train(const DataFlags& f, const std::string& out) {
  TrainConfig c = to_config(f);
  c.dataset = list_ppm_files(f.content_dir);
  if (c.dataset.empty()) throw InputError(f.content_dir, "no .ppm files");
  TrainResult r = train(c, progress(c, ""));
  save_generator(out, r.generator);
  write_text(out + ".log", report_to_text(r.report));
  // Timing goes to stderr so stdout stays identical across reruns.
  std::fprintf(stderr, "trained %lld steps in %.1fs\n", static_cast<long long>(c.steps),
               r.report.wall_seconds);
  std::printf("loss %.6g -> %.6g\n", r.report.losses.front(), r.report.losses.back());
  std::printf("weights: %s\nlog: %s.log\n", out.c_str(), out.c_str());
  return kOk;
}

int cmd_stylize(const std::string& weights, const std::string& input, const std::string& output,
                std::uint64_t seed) {
  Generator g = load_generator(weights);
  const ImageRGB img = read_ppm(input);
  require_divisible(img, input);
  const Tensor4 out = stylize(g, image_to_tensor(img), seed);
  write_ppm(output, tensor_to_image(out));
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw UsageError("--seeds: empty entry in '" + text + "'");
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("--seeds: '" + item + "' is not an integer");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw UsageError("--seeds must list at least one seed");
  return seeds;
}

int cmd_compare_norms(const DataFlags& f, const std::string& seeds_text,
                      const std::string& out_dir, std::string holdout) {
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
  TrainConfig base = to_config(f);
  std::vector<std::string> files = list_ppm_files(f.content_dir);
  if (holdout.empty()) {
    if (files.size() < 2) {
      throw InputError(f.content_dir, "need --holdout or at least two content images");
    }
    holdout = files.back();
    files.pop_back();
  }
  if (files.empty()) throw InputError(f.content_dir, "no .ppm files");
  base.dataset = files;
  const ImageRGB held = read_ppm(holdout);
  require_divisible(held, holdout);
  const Tensor4 held_tensor = image_to_tensor(held);
  std::filesystem::create_directories(out_dir);

  std::string summary =
      "# compare-norms: final training loss per seed (batch vs instance normalization)\n"
      "seed batch_final instance_final ratio_instance_over_batch\n";
  const TrainData data = load_train_data(base);
  int instance_wins = 0;
  for (std::uint64_t seed : seeds) {
    double finals[2] = {0.0, 0.0};
    int k = 0;
    for (NormMode mode : {NormMode::batch, NormMode::instance}) {
      TrainConfig c = base;
      c.seed = seed;
      c.generator.norm_mode = mode;
      const std::string stem =
          (std::filesystem::path(out_dir) / ("seed" + std::to_string(seed) + "_" + to_string(mode)))
              .string();
      TrainResult r = train(c, data, progress(c, "[seed " + std::to_string(seed) + " " +
                                                     to_string(mode) + "] "));
      save_generator(stem + ".weights", r.generator);
      write_text(stem + ".log", report_to_text(r.report));
      write_ppm(stem + ".ppm", tensor_to_image(stylize(r.generator, held_tensor, seed)));
      finals[k++] = r.report.losses.back();
    }
    if (finals[1] < finals[0]) ++instance_wins;
    char row[160];
    std::snprintf(row, sizeof row, "%llu %.9g %.9g %.6f\n", static_cast<unsigned long long>(seed),
                  finals[0], finals[1], finals[1] / finals[0]);
    summary += row;
  }
  summary += "# instance lower in " + std::to_string(instance_wins) + " of " +
             std::to_string(seeds.size()) + " seeds\n";
  write_text((std::filesystem::path(out_dir) / "summary.txt").string(), summary);
  std::fputs(summary.c_str(), stdout);
  return kOk;
}

int cmd_gradcheck(const std::string& subject, double tol, std::uint64_t seed, double h) {
  const auto& names = gradcheck_subjects();
  if (subject != "all" && std::find(names.begin(), names.end(), subject) == names.end()) {
    throw UsageError("unknown subject '" + subject + "'");
  }
  if (!(h > 0.0)) throw UsageError("--step must be positive");
  GradcheckOptions o;
  o.seed = seed;
  o.h = h;
  const GradcheckReport r = gradcheck(subject, o);
  for (const auto& e : r.entries) {
    std::printf("%-20s %-24s n=%-4lld max_rel_error=%.3e %s\n", e.subject.c_str(),
                e.group.c_str(), static_cast<long long>(e.checked), e.max_rel_error,
                e.max_rel_error < tol ? "ok" : "FAIL");
  }
  std::printf("max relative error %.3e, tolerance %.1e: %s\n", r.max_error(), tol,
              r.passed(tol) ? "PASS" : "FAIL");
  return r.passed(tol) ? kOk : kCheckFailed;
}

int cmd_synth(const std::string& out_dir, int count, std::int64_t size, std::uint64_t seed) {
  if (count < 1 || size < 8) throw UsageError("synth needs --count >= 1 and --size >= 8");
  const auto content = std::filesystem::path(out_dir) / "content";
  std::filesystem::create_directories(content);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "content_%02d.ppm", i);
    write_ppm((content / name).string(), synth_content(seed + 100 + static_cast<std::uint64_t>(i), size, size));
  }
  write_ppm((std::filesystem::path(out_dir) / "holdout.ppm").string(),
            synth_content(seed + 100 + static_cast<std::uint64_t>(count), size, size));
  write_ppm((std::filesystem::path(out_dir) / "style.ppm").string(), synth_style(seed + 7, size, size));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"normkit: feed-forward stylization with batch/instance normalization"};
  app.require_subcommand(1);

  DataFlags train_flags;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a generator for one style");
  add_data_flags(train_cmd, train_flags, true);
  train_cmd->add_option("--out", train_out, "Output weight file (log goes to <out>.log)")
      ->required();

  std::string weights, input, output;
  std::uint64_t stylize_seed = 0;
  auto* stylize_cmd = app.add_subcommand("stylize", "Apply a trained generator to an image");
  stylize_cmd->add_option("--weights", weights, "Generator weight file")->required();
  stylize_cmd->add_option("--input", input, "Input PPM")->required();
  stylize_cmd->add_option("--output", output, "Output PPM")->required();
  stylize_cmd->add_option("--seed", stylize_seed, "Noise seed");

  DataFlags cmp_flags;
  std::string seeds, cmp_out = "compare-norms", holdout;
  auto* cmp_cmd = app.add_subcommand(
      "compare-norms", "Train batch- and instance-norm generators from identical initializations");
  add_data_flags(cmp_cmd, cmp_flags, false);
  cmp_cmd->add_option("--seeds", seeds, "Comma-separated seeds, e.g. 1,2,3")->required();
  cmp_cmd->add_option("--out-dir", cmp_out, "Directory for logs, weights and images");
  cmp_cmd->add_option("--holdout", holdout,
                      "Content image to stylize with each generator "
                      "(default: last content image, excluded from training)");

  std::string subject = "all";
  double tol = 1e-4;
  std::uint64_t gc_seed = 1;
  double gc_h = 1e-5;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc_cmd->add_option("--subject", subject, "all or one subject name");
  gc_cmd->add_option("--tol", tol, "Maximum accepted relative error");
  gc_cmd->add_option("--seed", gc_seed, "Seed for the random test inputs");
  gc_cmd->add_option("--step", gc_h, "Finite-difference step h");

  std::string synth_out;
  int synth_count = 4;
  std::int64_t synth_size = 32;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Write procedural demo content and style images");
  synth_cmd->add_option("--out-dir", synth_out, "Output directory")->required();
  synth_cmd->add_option("--count", synth_count, "Number of content images");
  synth_cmd->add_option("--size", synth_size, "Square image size in pixels");
  synth_cmd->add_option("--seed", synth_seed, "Generation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, train_out);
    if (*stylize_cmd) return cmd_stylize(weights, input, output, stylize_seed);
    if (*cmp_cmd) return cmd_compare_norms(cmp_flags, seeds, cmp_out, holdout);
    if (*gc_cmd) return cmd_gradcheck(subject, tol, gc_seed, gc_h);
    if (*synth_cmd) return cmd_synth(synth_out, synth_count, synth_size, synth_seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const Diverged& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const normkit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  }
  return kUsage;
}
