// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed here, not taken from flags.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace normkit;
using normkit::testing::TempDir;

namespace {

constexpr double kLayerGradTol = 1e-6;
constexpr double kCompositeGradTol = 1e-4;
constexpr double kGradcheckCpuSeconds = 60.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kMeanTol = 1e-9;
constexpr double kVarianceFloor = 1e-2;
constexpr double kInvarianceTol = 1e-3;
constexpr double kConvOracleTol = 1e-12;
constexpr double kLossRatio = 0.5;
constexpr double kTrainCpuSeconds = 300.0;
constexpr int kInstanceWinsNeeded = 2;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool ok, const std::string& what) {
  if (!ok) {
    o.pass = false;
    o.detail += (o.detail.empty() ? "" : "; ") + what;
  }
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

int run_cli(const std::string& args, const std::string& stdout_path = "/dev/null") {
  const std::string cmd = std::string(NORMKIT_CLI) + " " + args + " >" + stdout_path + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_text(const std::string& path) {
  const auto b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

// Relative path -> bytes for every regular file under `dir`.
std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file_bytes(e.path());
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1 ------------------------------------------------------------------------
Outcome gradient_suite() {
  Outcome o;
  const double start = cpu_seconds();
  const GradcheckReport r = gradcheck("all");
  const double cpu = cpu_seconds() - start;
  double layer_max = 0.0, composite_max = 0.0;
  for (const auto& e : r.entries) {
    const bool composite = e.subject == "loss" || e.subject.rfind("generator", 0) == 0;
    double& m = composite ? composite_max : layer_max;
    m = std::max(m, e.max_rel_error);
  }
  for (const char* s : {"conv_zero", "conv_reflect", "relu", "upsample", "batch_norm",
                        "instance_norm", "generator_instance", "generator_batch"}) {
    bool seen = false;
    for (const auto& e : r.entries) seen = seen || e.subject == s;
    require(o, seen, std::string("subject missing: ") + s);
  }
  require(o, layer_max < kLayerGradTol, "layer error " + fmt("%.3e", layer_max));
  require(o, composite_max < kCompositeGradTol, "composite error " + fmt("%.3e", composite_max));
  require(o, cpu < kGradcheckCpuSeconds, "cpu " + fmt("%.1f s", cpu));
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("layers ") + fmt("%.2e", layer_max) +
              ", composite " + fmt("%.2e", composite_max) + ", " + fmt("%.1f s cpu", cpu);
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome normalization_identities() {
  Outcome o;
  RngStream rng(2002);
  double bn_in = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Shape s{1, 1 + static_cast<std::int64_t>(i % 4), 2 + i % 5, 3 + i % 4};
    const Tensor4 x = sample_gaussian(rng, s);
    RunningStats rs;
    bn_in = std::max(bn_in, max_abs_diff(batch_norm_forward(x, 1e-5, Phase::train, rs).first,
                                         instance_norm_forward(x, 1e-5).first));
  }
  require(o, bn_in <= kIdentityTol, "(a) BN vs IN " + fmt("%.3e", bn_in));

  int planes_checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Tensor4 x = sample_gaussian(rng, Shape{2, 3, 4, 5});
    const Tensor4 y = instance_norm_forward(x, 1e-5).first;
    for (std::int64_t t = 0; t < 2; ++t)
      for (std::int64_t c = 0; c < 3; ++c) {
        if (normkit::testing::plane_moments(x.plane(t, c)).second < kVarianceFloor) continue;
        ++planes_checked;
        const auto [m, v] = normkit::testing::plane_moments(y.plane(t, c));
        if (!(std::abs(m) < kMeanTol) || !(v >= 1.0 - 1e-3 && v <= 1.0)) {
          require(o, false, "(b) plane stats mean " + fmt("%.3e", m) + " var " + fmt("%.9f", v));
        }
      }
  }
  require(o, planes_checked > 500, "(b) too few planes above the floor");

  // (c) The floor is applied to every plane that enters the norm, so the
  // base spread is wide enough to survive a = 0.1.
  double inv = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Tensor4 x = scale(sample_gaussian(rng, Shape{2, 3, 5, 5}), 2.0);
    const Tensor4 base = instance_norm_forward(x, 1e-5).first;
    for (double a : {0.1, 0.5, 2.0, 10.0}) {
      Tensor4 moved = x;
      bool floor_ok = true;
      for (std::int64_t t = 0; t < 2; ++t)
        for (std::int64_t c = 0; c < 3; ++c) {
          const double b = rng.next_below(2) ? 1.0 : -1.0;
          for (double& v : moved.plane(t, c)) v = a * v + b;
          floor_ok = floor_ok &&
                     normkit::testing::plane_moments(moved.plane(t, c)).second >= kVarianceFloor &&
                     normkit::testing::plane_moments(x.plane(t, c)).second >= kVarianceFloor;
        }
      if (!floor_ok) continue;
      inv = std::max(inv, max_abs_diff(instance_norm_forward(moved, 1e-5).first, base));
    }
  }
  require(o, inv < kInvarianceTol, "(c) IN(a x + b) diff " + fmt("%.3e", inv));

  const Tensor4 cn = contrast_norm(Tensor4(Shape{1, 1, 2, 1}, {1.0, 3.0}));
  require(o, cn[0] == 0.25 && cn[1] == 0.75, "(d) contrast_norm hand values");
  bool rejected = false;
  try {
    contrast_norm(Tensor4(Shape{1, 2, 2, 2}, 0.0));
  } catch (const DegenerateInput&) {
    rejected = true;
  }
  require(o, rejected, "(d) zero-sum plane accepted");
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("BN~IN ") + fmt("%.1e", bn_in) +
              ", invariance " + fmt("%.2e", inv);
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome conv_oracle() {
  Outcome o;
  RngStream rng(3003);
  double worst = 0.0;
  int combos = 0;
  for (int i = 0; i < 25; ++i) {
    const std::int64_t k = 1 + 2 * (i % 3);               // 1, 3, 5
    const std::int64_t stride = 1 + (i / 3) % 2;          // 1, 2
    const auto mode = (i / 6) % 2 ? PaddingMode::reflect : PaddingMode::zero;
    const std::int64_t pad = (i / 12) % 2 ? 0 : (k - 1) / 2;
    const std::int64_t cin = 1 + i % 3, cout = 1 + (i + 1) % 4;
    const std::int64_t w = 6 + i % 5, h = 5 + (i * 7) % 6;
    ConvParams p;
    p.weight = sample_gaussian(rng, Shape{cout, cin, k, k});
    if (i % 2) p.bias = sample_gaussian(rng, Shape{1, cout, 1, 1});
    p.stride = stride;
    p.padding = mode;
    p.pad = pad;
    const Tensor4 x = sample_gaussian(rng, Shape{1 + i % 2, cin, w, h});
    const Tensor4 got = conv2d_forward(x, p);
    const Tensor4 want =
        normkit::testing::naive_conv(x, p.weight, p.bias ? &*p.bias : nullptr, stride, pad, mode);
    if (got.shape() != want.shape()) {
      require(o, false, "shape mismatch at combination " + std::to_string(i));
      continue;
    }
    worst = std::max(worst, max_abs_diff(got, want));
    ++combos;
  }
  require(o, combos == 25, "only " + std::to_string(combos) + " combinations compared");
  require(o, worst <= kConvOracleTol, "max abs diff " + fmt("%.3e", worst));
  o.detail += (o.detail.empty() ? "" : " | ") + std::to_string(combos) + " combinations, max diff " +
              fmt("%.1e", worst);
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome batch_coupling() {
  Outcome o;
  RngStream rng(4004);
  const Tensor4 x = sample_gaussian(rng, Shape{3, 4, 6, 6});
  Tensor4 companions = x;
  for (std::int64_t t : {0, 2})
    for (double& v : companions.data().subspan(static_cast<std::size_t>(t * 4 * 36), 4 * 36)) {
      v = 3.0 * v + 1.0;
    }
  const Tensor4 in_a = instance_norm_forward(x).first;
  const Tensor4 in_b = instance_norm_forward(companions).first;
  require(o, slice_batch(in_a, 1, 1).bitwise_equal(slice_batch(in_b, 1, 1)),
          "IN instance changed with its companions");
  require(o, slice_batch(in_a, 1, 1).bitwise_equal(instance_norm_forward(slice_batch(x, 1, 1)).first),
          "IN batched vs alone differ");

  RunningStats r1, r2;
  const Tensor4 bn_a = batch_norm_forward(x, 1e-5, Phase::train, r1).first;
  const Tensor4 bn_b = batch_norm_forward(companions, 1e-5, Phase::train, r2).first;
  const double moved = max_abs_diff(slice_batch(bn_a, 1, 1), slice_batch(bn_b, 1, 1));
  require(o, moved > 1e-3, "BN counterexample not produced");
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("IN bitwise independent, BN moved by ") +
              fmt("%.3f", moved);
  return o;
}

// 5 ------------------------------------------------------------------------
Outcome training_surrogate(const normkit::testing::PinnedData& data) {
  Outcome o;
  TrainConfig c;
  c.dataset = data.content;
  c.style = data.style;
  c.seed = 42;
  c.steps = 200;
  c.generator.norm_mode = NormMode::instance;
  const double start = cpu_seconds();
  const TrainResult a = train(c);
  const double cpu = cpu_seconds() - start;
  const TrainResult b = train(c);
  const double first = a.report.losses.front();
  const double last = a.report.losses.back();
  require(o, last < kLossRatio * first, "final/initial " + fmt("%.3f", last / first));
  require(o, cpu < kTrainCpuSeconds, "cpu " + fmt("%.1f s", cpu));
  require(o, a.report.losses == b.report.losses && a.report.checksum == b.report.checksum &&
                 report_to_text(a.report) == report_to_text(b.report),
          "second run differs");
  o.detail += (o.detail.empty() ? "" : " | ") + std::string("loss ") + fmt("%.5f", first) + " -> " +
              fmt("%.5f", last) + " (ratio " + fmt("%.3f", last / first) + "), " +
              fmt("%.1f s cpu", cpu) + ", rerun bitwise equal";
  return o;
}

// 6 ------------------------------------------------------------------------
Outcome compare_norms(const TempDir& dir, const std::string& out_dir) {
  Outcome o;
  const int rc = run_cli("compare-norms --style " + (dir / "style.ppm") + " --content-dir " +
                         (dir / "content") + " --holdout " + (dir / "holdout.ppm") +
                         " --seeds 1,2,3 --out-dir " + out_dir);
  require(o, rc == 0, "compare-norms exit " + std::to_string(rc));
  if (rc != 0) return o;
  std::istringstream in(read_text(out_dir + "/summary.txt"));
  std::string line, rows;
  int wins = -1;
  while (std::getline(in, line)) {
    unsigned long long seed;
    double bn, inorm;
    if (std::sscanf(line.c_str(), "%llu %lf %lf", &seed, &bn, &inorm) == 3) {
      rows += (rows.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " BN " +
              fmt("%.5f", bn) + " IN " + fmt("%.5f", inorm);
    }
    std::sscanf(line.c_str(), "# instance lower in %d", &wins);
  }
  require(o, wins >= kInstanceWinsNeeded, "instance lower in " + std::to_string(wins) + " of 3");
  o.detail += (o.detail.empty() ? "" : " | ") + rows + "; IN lower in " + std::to_string(wins) + "/3";
  return o;
}

// 7 ------------------------------------------------------------------------
Outcome controlled_experiment(const std::string& compare_dir) {
  Outcome o;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig c;
    c.seed = seed;
    c.generator.norm_mode = NormMode::batch;
    const Generator bn = build_for_run(c);
    c.generator.norm_mode = NormMode::instance;
    const Generator in = build_for_run(c);
    require(o, bn.parameter_count() == in.parameter_count(), "parameter counts differ");
    require(o, bn.params().size() == in.params().size(), "parameter names differ");
    for (const auto& [name, t] : bn.params()) {
      auto it = in.params().find(name);
      require(o, it != in.params().end() && it->second.bitwise_equal(t),
              "initial weight differs: " + name);
    }
  }
  // The logged configurations of a compare-norms pair differ only in norm.
  const RunReport lb = parse_run_report(read_text(compare_dir + "/seed1_batch.log"));
  const RunReport li = parse_run_report(read_text(compare_dir + "/seed1_instance.log"));
  require(o, lb.config.size() == li.config.size(), "config echo length differs");
  std::string differing;
  for (std::size_t i = 0; i < std::min(lb.config.size(), li.config.size()); ++i) {
    if (lb.config[i] != li.config[i]) differing += lb.config[i].first + " ";
  }
  require(o, differing == "norm ", "runs differ in: " + differing);
  o.detail += (o.detail.empty() ? "" : " | ") +
              std::string("seeds 1-3 identical initial weights; logged configs differ only in norm");
  return o;
}

// 8 ------------------------------------------------------------------------
Outcome persistence(const TempDir& dir, const std::string& weights) {
  Outcome o;
  RngStream rng(8008);
  for (int i = 0; i < 10; ++i) {
    GeneratorConfig c;
    c.norm_mode = static_cast<NormMode>(rng.next_below(3));
    c.padding_mode = static_cast<PaddingMode>(rng.next_below(2));
    c.base_channels = 2 + static_cast<std::int64_t>(rng.next_below(5));
    c.residual_blocks = static_cast<std::int64_t>(rng.next_below(3));
    c.noise_channels = static_cast<std::int64_t>(rng.next_below(3));
    c.affine = rng.next_below(2) == 1;
    Generator g = Generator::build(c, rng.split("gen" + std::to_string(i)));
    for (auto& [name, t] : g.params()) {
      RngStream pr = rng.split(name + std::to_string(i));
      t = sample_gaussian(pr, t.shape());
    }
    if (c.norm_mode == NormMode::batch) {
      const Tensor4 x = sample_uniform(rng, Shape{2, 3, 8, 8}, 0.0, 1.0);
      std::optional<Tensor4> z;
      if (c.noise_channels) z = sample_gaussian(rng, Shape{2, c.noise_channels, 8, 8});
      g.forward(x, z, Phase::train);
    }
    const std::string path = dir / ("random" + std::to_string(i) + ".weights");
    save_generator(path, g);
    const Generator back = load_generator(path);
    bool same = back.params().size() == g.params().size();
    for (const auto& [name, t] : g.params()) same = same && back.params().at(name).bitwise_equal(t);
    for (const auto& [name, rs] : g.running_stats()) {
      const RunningStats& br = back.running_stats().at(name);
      same = same && br.mean == rs.mean && br.var == rs.var && br.sample_count == rs.sample_count;
    }
    save_generator(path + ".again", back);
    same = same && read_file_bytes(path) == read_file_bytes(path + ".again");
    require(o, same, "generator " + std::to_string(i) + " did not round-trip");
  }

  const ImageRGB img = synth_style(99, 20, 12);
  write_ppm(dir / "roundtrip.ppm", img);
  const ImageRGB img_back = read_ppm(dir / "roundtrip.ppm");
  require(o, img_back.width == 20 && img_back.height == 12 && img_back.pixels == img.pixels,
          "PPM round trip");

  for (int n : {16, 32, 48}) {
    const std::string in = dir / ("sq" + std::to_string(n) + ".ppm");
    const std::string out = dir / ("sq" + std::to_string(n) + "_out.ppm");
    write_ppm(in, synth_content(500 + static_cast<std::uint64_t>(n), n, n));
    const int rc = run_cli("stylize --weights " + weights + " --input " + in + " --output " + out);
    if (rc != 0) {
      require(o, false, "stylize " + std::to_string(n) + " exit " + std::to_string(rc));
      continue;
    }
    const ImageRGB res = read_ppm(out);
    require(o, res.width == n && res.height == n, "stylize " + std::to_string(n) + " size");
  }
  o.detail += (o.detail.empty() ? "" : " | ") +
              std::string("10 generators, PPM, stylize at 16/32/48 px");
  return o;
}

// 9 ------------------------------------------------------------------------
Outcome determinism(const TempDir& dir) {
  Outcome o;
  const std::string data = dir / "det_data";
  const std::string flags = "--style " + data + "/style.ppm --content-dir " + data + "/content";
  const std::string small = " --steps 5 --batch-size 2 --base-channels 4 --residual-blocks 1";
  const std::vector<std::pair<std::string, std::function<std::string(const std::string&)>>> cmds = {
      {"synth", [&](const std::string& d) { return "synth --out-dir " + d + " --count 3 --size 16 --seed 5"; }},
      {"train", [&](const std::string& d) { return "train " + flags + small + " --norm batch --out " + d + "/g.weights"; }},
      {"stylize", [&](const std::string& d) {
         return "stylize --weights " + dir / "det_ref.weights" + " --input " + data +
                "/holdout.ppm --output " + d + "/out.ppm --seed 11";
       }},
      {"compare-norms", [&](const std::string& d) {
         return "compare-norms " + flags + small + " --seeds 1,2 --out-dir " + d;
       }},
      {"gradcheck", [&](const std::string&) { return std::string("gradcheck --subject conv_reflect"); }},
  };
  if (run_cli("synth --out-dir " + data + " --count 3 --size 16 --seed 5") != 0 ||
      run_cli("train " + flags + small + " --out " + dir / "det_ref.weights") != 0) {
    require(o, false, "could not prepare inputs");
    return o;
  }
  std::string checked;
  for (const auto& [name, make] : cmds) {
    std::vector<std::map<std::string, std::vector<std::uint8_t>>> trees;
    // Same flags both times: run into one directory, then move it aside.
    const fs::path d = dir.path() / ("det_" + name);
    for (int rep = 0; rep < 2; ++rep) {
      fs::create_directories(d);
      const int rc = run_cli(make(d.string()), (d / "stdout.txt").string());
      require(o, rc == 0, name + " exit " + std::to_string(rc));
      trees.push_back(tree_bytes(d));
      fs::rename(d, dir.path() / ("det_" + name + std::to_string(rep)));
    }
    require(o, trees[0] == trees[1], name + " outputs differ between runs");
    checked += (checked.empty() ? "" : ", ") + name + " (" + std::to_string(trees[0].size()) + " files)";
  }
  o.detail += (o.detail.empty() ? "" : " | ") + checked + " byte-identical";
  return o;
}

}  // namespace

int main() {
  TempDir dir("acceptance");
  const normkit::testing::PinnedData pinned = normkit::testing::write_pinned_data(dir);
  const std::string compare_dir = dir / "compare";

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},
      {2, "normalization identities", normalization_identities},
      {3, "conv oracle equivalence", conv_oracle},
      {4, "batch-coupling witnesses", batch_coupling},
      {5, "training surrogate", [&] { return training_surrogate(pinned); }},
      {6, "batch vs instance norm surrogate", [&] { return compare_norms(dir, compare_dir); }},
      {7, "controlled-experiment audit", [&] { return controlled_experiment(compare_dir); }},
      {8, "persistence and formats",
       [&] { return persistence(dir, compare_dir + "/seed1_instance.weights"); }},
      {9, "determinism", [&] { return determinism(dir); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s (%.1f s) %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
