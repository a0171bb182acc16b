#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "normkit/errors.hpp"
#include "normkit/generator.hpp"
#include "normkit/tensor.hpp"

namespace normkit {

static_assert(std::endian::native == std::endian::little,
              "weight-file codec assumes a little-endian host");

// 8-bit RGB, row-major, top-left origin.
struct ImageRGB {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  bool operator==(const ImageRGB&) const = default;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path, "cannot open file");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError(path, "cannot open file for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError(path, "write failed");
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255).

inline std::vector<std::uint8_t> encode_ppm(const ImageRGB& img) {
  if (img.width < 1 || img.height < 1 ||
      static_cast<std::int64_t>(img.pixels.size()) != 3 * img.width * img.height) {
    throw InvalidShape("encode_ppm: inconsistent image dimensions");
  }
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline ImageRGB decode_ppm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n' && bytes[pos] != '\r') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) -> std::int64_t {
    skip_space_and_comments();
    const std::size_t start = pos;
    std::int64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1LL << 31)) throw FormatError(std::string("PPM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PPM: expected ") + what, start);
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("PPM: bad magic, expected P6", 0);
  }
  pos = 2;
  if (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
    throw FormatError("PPM: bad magic, expected P6", 0);
  }
  ImageRGB img;
  img.width = read_uint("width");
  img.height = read_uint("height");
  const std::size_t maxval_at = pos;
  const std::int64_t maxval = read_uint("maxval");
  if (img.width < 1 || img.height < 1) throw FormatError("PPM: zero dimension", maxval_at);
  if (maxval != 255) {
    throw FormatError("PPM: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("PPM: expected single whitespace before payload", pos);
  }
  ++pos;
  const auto need = static_cast<std::size_t>(3 * img.width * img.height);
  if (bytes.size() - pos < need) {
    throw FormatError("PPM: truncated payload, expected " + std::to_string(need) +
                          " bytes, found " + std::to_string(bytes.size() - pos),
                      bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

inline ImageRGB read_ppm(const std::string& path) {
  try {
    return decode_ppm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

inline void write_ppm(const std::string& path, const ImageRGB& img) {
  write_file_bytes(path, encode_ppm(img));
}

// (1, 3, width, height), values / 255.
inline Tensor4 image_to_tensor(const ImageRGB& img) {
  Tensor4 t(Shape{1, 3, img.width, img.height});
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < 3; ++c)
        t(0, c, x, y) = img.pixels[static_cast<std::size_t>((y * img.width + x) * 3 + c)] / 255.0;
  return t;
}

// Instance `t` of a 3-channel tensor, round(clamp(v, 0, 1) * 255).
inline ImageRGB tensor_to_image(const Tensor4& tensor, std::int64_t t = 0) {
  const Shape& s = tensor.shape();
  if (s.c != 3) throw ShapeMismatch("tensor_to_image: expected 3 channels, got " + s.str());
  ImageRGB img{s.w, s.h, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * s.w * s.h))};
  for (std::int64_t y = 0; y < s.h; ++y)
    for (std::int64_t x = 0; x < s.w; ++x)
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(tensor(t, c, x, y), 0.0, 1.0);
        img.pixels[static_cast<std::size_t>((y * s.w + x) * 3 + c)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

// ---------------------------------------------------------------------------
// Weight file: "NRMK1\n", u32 entry count, then per entry u16 name length,
// name bytes, four u32 dims (T, C, W, H) and T*C*W*H float64 values, all
// little-endian.

inline constexpr std::string_view kWeightMagic = "NRMK1\n";

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &v, sizeof(T));
  out.insert(out.end(), raw.begin(), raw.end());
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n, "entry name");
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("weight file truncated reading ") + what, pos_);
    }
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const std::map<std::string, Tensor4>& named) {
  std::vector<std::uint8_t> out(kWeightMagic.begin(), kWeightMagic.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    if (name.empty() || name.size() > 0xffff) {
      throw InvalidArgument("weight entry name must be 1..65535 bytes");
    }
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Shape& s = t.shape();
    for (std::int64_t d : {s.t, s.c, s.w, s.h}) {
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) detail::put_le<double>(out, v);
  }
  return out;
}

inline std::map<std::string, Tensor4> decode_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kWeightMagic.size() ||
      !std::equal(kWeightMagic.begin(), kWeightMagic.end(), bytes.begin())) {
    throw FormatError("weight file: bad magic", 0);
  }
  detail::ByteReader r(bytes);
  r.get_string(kWeightMagic.size());
  const auto count = r.get<std::uint32_t>("entry count");
  std::map<std::string, Tensor4> named;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t entry_at = r.pos();
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.get_string(len);
    Shape s;
    s.t = r.get<std::uint32_t>("dims");
    s.c = r.get<std::uint32_t>("dims");
    s.w = r.get<std::uint32_t>("dims");
    s.h = r.get<std::uint32_t>("dims");
    if (s.t < 1 || s.c < 1 || s.w < 1 || s.h < 1) {
      throw FormatError("weight file: zero dimension in entry '" + name + "'", entry_at);
    }
    const auto n = static_cast<std::size_t>(s.numel());
    r.need(n * sizeof(double), "tensor payload");
    std::vector<double> v(n);
    for (auto& x : v) x = r.get<double>("tensor payload");
    if (!named.emplace(name, Tensor4(s, std::move(v))).second) {
      throw FormatError("weight file: duplicate entry '" + name + "'", entry_at);
    }
  }
  if (!r.done()) throw FormatError("weight file: trailing bytes", r.pos());
  return named;
}

inline void save_weights(const std::string& path, const std::map<std::string, Tensor4>& named) {
  write_file_bytes(path, encode_weights(named));
}

inline std::map<std::string, Tensor4> load_weights(const std::string& path) {
  try {
    return decode_weights(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Generator persistence. Besides the parameters, a file holds
//   meta.config                 (1,1,1,8) norm, padding, base channels,
//                               residual blocks, noise channels, kernel,
//                               eps, affine
//   <norm>.running_mean / _var  (1,C,1,1) batch-norm running statistics
//   <norm>.running_count        (1,1,1,1)

inline std::map<std::string, Tensor4> generator_to_tensors(const Generator& g) {
  std::map<std::string, Tensor4> named = g.params();
  const GeneratorConfig& c = g.config();
  named.emplace("meta.config",
                Tensor4(Shape{1, 1, 1, 8},
                        {static_cast<double>(c.norm_mode), static_cast<double>(c.padding_mode),
                         static_cast<double>(c.base_channels),
                         static_cast<double>(c.residual_blocks),
                         static_cast<double>(c.noise_channels), static_cast<double>(c.kernel),
                         c.eps, c.affine ? 1.0 : 0.0}));
  for (const auto& [name, rs] : g.running_stats()) {
    if (rs.sample_count == 0) continue;
    const auto ch = static_cast<std::int64_t>(rs.mean.size());
    named.emplace(name + ".running_mean", Tensor4(Shape{1, ch, 1, 1}, rs.mean));
    named.emplace(name + ".running_var", Tensor4(Shape{1, ch, 1, 1}, rs.var));
    named.emplace(name + ".running_count",
                  Tensor4(Shape{1, 1, 1, 1}, static_cast<double>(rs.sample_count)));
  }
  return named;
}

inline Generator generator_from_tensors(const std::map<std::string, Tensor4>& named) {
  auto meta = named.find("meta.config");
  if (meta == named.end() || meta->second.size() != 8) {
    throw InvalidArgument("weights lack a valid meta.config entry");
  }
  const Tensor4& m = meta->second;
  GeneratorConfig c;
  const auto norm = static_cast<int>(m[0]);
  const auto pad = static_cast<int>(m[1]);
  if (norm < 0 || norm > 2 || pad < 0 || pad > 1) {
    throw InvalidArgument("meta.config has unknown norm or padding mode");
  }
  c.norm_mode = static_cast<NormMode>(norm);
  c.padding_mode = static_cast<PaddingMode>(pad);
  c.base_channels = static_cast<std::int64_t>(m[2]);
  c.residual_blocks = static_cast<std::int64_t>(m[3]);
  c.noise_channels = static_cast<std::int64_t>(m[4]);
  c.kernel = static_cast<std::int64_t>(m[5]);
  c.eps = m[6];
  c.affine = m[7] != 0.0;
  Generator g = Generator::build(c, RngStream(0));
  std::set<std::string> used{"meta.config"};
  for (auto& [name, t] : g.params()) {
    auto it = named.find(name);
    if (it == named.end()) throw InvalidArgument("weights missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ShapeMismatch("parameter '" + name + "' has shape " + it->second.shape().str() +
                          ", expected " + t.shape().str());
    }
    t = it->second;
    used.insert(name);
  }
  for (auto& [name, rs] : g.running_stats()) {
    auto mean = named.find(name + ".running_mean");
    if (mean == named.end()) continue;
    auto var = named.find(name + ".running_var");
    auto count = named.find(name + ".running_count");
    if (var == named.end() || count == named.end()) {
      throw InvalidArgument("incomplete running statistics for '" + name + "'");
    }
    rs.mean = mean->second.values();
    rs.var = var->second.values();
    rs.sample_count = static_cast<std::int64_t>(count->second[0]);
    used.insert({name + ".running_mean", name + ".running_var", name + ".running_count"});
  }
  for (const auto& [name, t] : named) {
    if (!used.count(name)) throw InvalidArgument("unexpected weight entry '" + name + "'");
  }
  return g;
}

inline void save_generator(const std::string& path, const Generator& g) {
  save_weights(path, generator_to_tensors(g));
}

inline Generator load_generator(const std::string& path) {
  return generator_from_tensors(load_weights(path));
}

// Sorted list of *.ppm files in a directory.
inline std::vector<std::string> list_ppm_files(const std::string& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw InputError(dir, "not a directory");
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace normkit
