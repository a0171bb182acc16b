#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "normkit/io.hpp"
#include "normkit/training.hpp"
#include "test_support.hpp"

namespace normkit {
namespace {

using testing::TempDir;

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

TEST(PpmTest, EncodeHeaderAndPayload) {
  ImageRGB img{2, 2, std::vector<std::uint8_t>(12)};
  for (std::size_t i = 0; i < 12; ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 20);
  const auto bytes = encode_ppm(img);
  const std::string header = "P6\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 12);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), header);
  EXPECT_EQ(bytes.back(), 220);
  const ImageRGB back = decode_ppm(bytes);
  EXPECT_EQ(back.width, 2);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(PpmTest, AcceptsComments) {
  auto bytes = bytes_of("P6\n# made by hand\n1 # width\n1\n255\n");
  bytes.insert(bytes.end(), {10, 20, 30});
  const ImageRGB img = decode_ppm(bytes);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{10, 20, 30}));
}

TEST(PpmTest, RejectsBadInput) {
  auto wide = bytes_of("P6\n1 1\n65535\n");
  wide.insert(wide.end(), 6, 0);
  EXPECT_THROW(decode_ppm(wide), FormatError);

  auto truncated = bytes_of("P6\n2 2\n255\n");
  truncated.insert(truncated.end(), 5, 0);
  try {
    decode_ppm(truncated);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), truncated.size());  // where the missing bytes begin
  }

  auto p3 = bytes_of("P3\n1 1\n255\n0 0 0\n");
  try {
    decode_ppm(p3);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  EXPECT_THROW(decode_ppm(bytes_of("P6\n0 1\n255\n")), FormatError);
}

TEST(PpmTest, MissingFileIsInputError) {
  EXPECT_THROW(read_ppm("/nonexistent/normkit/x.ppm"), InputError);
}

TEST(PpmTest, FileRoundTrip) {
  TempDir dir("ppm");
  const ImageRGB img = synth_content(3, 12, 8);
  write_ppm(dir / "a.ppm", img);
  const ImageRGB back = read_ppm(dir / "a.ppm");
  EXPECT_EQ(back.width, 12);
  EXPECT_EQ(back.height, 8);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(ImageTensorTest, LayoutAndRoundTrip) {
  ImageRGB img{3, 2, std::vector<std::uint8_t>(18)};
  for (std::size_t i = 0; i < 18; ++i) img.pixels[i] = static_cast<std::uint8_t>(13 * i);
  const Tensor4 t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 3, 2}));
  // Pixel (x=2, y=1), green channel.
  EXPECT_EQ(t(0, 1, 2, 1), img.pixels[(1 * 3 + 2) * 3 + 1] / 255.0);
  EXPECT_EQ(tensor_to_image(t).pixels, img.pixels);

  RngStream rng(4);
  const Tensor4 x = sample_uniform(rng, Shape{1, 3, 5, 5}, 0.0, 1.0);
  EXPECT_LE(max_abs_diff(image_to_tensor(tensor_to_image(x)), x), 0.5 / 255.0 + 1e-15);

  Tensor4 out_of_range(Shape{1, 3, 1, 1}, {-0.5, 1.5, 0.5});
  const ImageRGB clamped = tensor_to_image(out_of_range);
  EXPECT_EQ(clamped.pixels, (std::vector<std::uint8_t>{0, 255, 128}));
}

TEST(WeightFileTest, BitwiseRoundTrip) {
  RngStream rng(5);
  std::map<std::string, Tensor4> named{
      {"a.weight", sample_gaussian(rng, Shape{4, 3, 3, 3})},
      {"a.bias", sample_gaussian(rng, Shape{1, 4, 1, 1})},
      {"z", Tensor4(Shape{1, 1, 1, 1}, -0.0)},
  };
  const auto bytes = encode_weights(named);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "NRMK1\n");
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 6, 4);
  EXPECT_EQ(count, 3u);
  const auto back = decode_weights(bytes);
  ASSERT_EQ(back.size(), named.size());
  for (const auto& [name, t] : named) EXPECT_TRUE(back.at(name).bitwise_equal(t)) << name;
  EXPECT_EQ(encode_weights(back), bytes);
}

TEST(WeightFileTest, RejectsCorruption) {
  std::map<std::string, Tensor4> named{{"w", Tensor4(Shape{1, 1, 2, 2}, 1.0)}};
  auto bytes = encode_weights(named);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_weights(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_weights(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_weights(trailing), FormatError);
}

TEST(GeneratorFileTest, RoundTripWithRunningStats) {
  TempDir dir("gen");
  GeneratorConfig c;
  c.norm_mode = NormMode::batch;
  c.affine = true;
  c.residual_blocks = 2;
  Generator g = Generator::build(c, RngStream(6));
  RngStream rng(6);
  const Tensor4 x = sample_uniform(rng, Shape{2, 3, 16, 16}, 0.0, 1.0);
  const Tensor4 z = sample_gaussian(rng, Shape{2, 1, 16, 16});
  g.forward(x, z, Phase::train);

  save_generator(dir / "g.weights", g);
  Generator back = load_generator(dir / "g.weights");
  EXPECT_EQ(back.config().residual_blocks, 2);
  EXPECT_TRUE(back.config().affine);
  for (const auto& [name, t] : g.params()) EXPECT_TRUE(back.params().at(name).bitwise_equal(t));
  for (const auto& [name, rs] : g.running_stats()) {
    EXPECT_EQ(back.running_stats().at(name).mean, rs.mean);
    EXPECT_EQ(back.running_stats().at(name).var, rs.var);
    EXPECT_EQ(back.running_stats().at(name).sample_count, rs.sample_count);
  }
  const Tensor4 probe = slice_batch(x, 0, 1);
  const Tensor4 pz = slice_batch(z, 0, 1);
  EXPECT_TRUE(g.forward(probe, pz, Phase::eval).bitwise_equal(back.forward(probe, pz, Phase::eval)));
  save_generator(dir / "again.weights", back);
  EXPECT_EQ(testing::file_bytes(dir / "again.weights"), testing::file_bytes(dir / "g.weights"));
}

TEST(GeneratorFileTest, RejectsMissingOrExtraEntries) {
  const Generator g = Generator::build(GeneratorConfig{}, RngStream(7));
  auto named = generator_to_tensors(g);
  auto missing = named;
  missing.erase("out.weight");
  EXPECT_THROW(generator_from_tensors(missing), InvalidArgument);
  auto extra = named;
  extra.emplace("stray", Tensor4(Shape{1, 1, 1, 1}));
  EXPECT_THROW(generator_from_tensors(extra), InvalidArgument);
  auto no_meta = named;
  no_meta.erase("meta.config");
  EXPECT_THROW(generator_from_tensors(no_meta), InvalidArgument);
}

}  // namespace
}  // namespace normkit
