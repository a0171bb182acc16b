#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "normkit/errors.hpp"

namespace normkit {

// Batch x channel x width x height. Height is the fastest-varying axis.
struct Shape {
  std::int64_t t = 1;
  std::int64_t c = 1;
  std::int64_t w = 1;
  std::int64_t h = 1;

  std::int64_t numel() const { return t * c * w * h; }
  std::int64_t plane() const { return w * h; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(t) + "," + std::to_string(c) + "," +
           std::to_string(w) + "," + std::to_string(h) + ")";
  }
};

inline void validate_shape(const Shape& s) {
  if (s.t < 1 || s.c < 1 || s.w < 1 || s.h < 1) {
    throw InvalidShape("all dimensions must be >= 1, got " + s.str());
  }
}

class Tensor4 {
 public:
  Tensor4() : Tensor4(Shape{}, 0.0) {}

  explicit Tensor4(Shape shape, double fill = 0.0) : shape_(shape) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_.numel()), fill);
  }

  Tensor4(Shape shape, std::vector<double> values) : shape_(shape) {
    validate_shape(shape_);
    if (static_cast<std::int64_t>(values.size()) != shape_.numel()) {
      throw ShapeMismatch("value count " + std::to_string(values.size()) +
                          " does not match shape " + shape_.str());
    }
    data_ = std::move(values);
  }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return shape_.numel(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::int64_t index(std::int64_t t, std::int64_t c, std::int64_t w,
                     std::int64_t h) const {
    return ((t * shape_.c + c) * shape_.w + w) * shape_.h + h;
  }

  double& operator()(std::int64_t t, std::int64_t c, std::int64_t w,
                     std::int64_t h) {
    return data_[static_cast<std::size_t>(index(t, c, w, h))];
  }
  double operator()(std::int64_t t, std::int64_t c, std::int64_t w,
                    std::int64_t h) const {
    return data_[static_cast<std::size_t>(index(t, c, w, h))];
  }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // Contiguous W*H plane of instance t, channel c.
  std::span<double> plane(std::int64_t t, std::int64_t c) {
    return std::span<double>(data_).subspan(
        static_cast<std::size_t>(index(t, c, 0, 0)),
        static_cast<std::size_t>(shape_.plane()));
  }
  std::span<const double> plane(std::int64_t t, std::int64_t c) const {
    return std::span<const double>(data_).subspan(
        static_cast<std::size_t>(index(t, c, 0, 0)),
        static_cast<std::size_t>(shape_.plane()));
  }

  // Contiguous C*W*H block of instance t.
  std::span<const double> instance(std::int64_t t) const {
    const auto n = static_cast<std::size_t>(shape_.c * shape_.plane());
    return std::span<const double>(data_).subspan(static_cast<std::size_t>(t) * n, n);
  }

  bool bitwise_equal(const Tensor4& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline Tensor4 new_tensor(Shape shape, double fill) { return Tensor4(shape, fill); }

inline void require_same_shape(const Tensor4& a, const Tensor4& b,
                               const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": " + a.shape().str() + " vs " +
                        b.shape().str());
  }
}

enum class BinaryOp { add, sub, mul };

inline Tensor4 map_binary(const Tensor4& a, const Tensor4& b, BinaryOp op) {
  require_same_shape(a, b, "map_binary");
  Tensor4 out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      break;
  }
  return out;
}

inline Tensor4 add(const Tensor4& a, const Tensor4& b) {
  return map_binary(a, b, BinaryOp::add);
}
inline Tensor4 sub(const Tensor4& a, const Tensor4& b) {
  return map_binary(a, b, BinaryOp::sub);
}
inline Tensor4 mul(const Tensor4& a, const Tensor4& b) {
  return map_binary(a, b, BinaryOp::mul);
}

inline Tensor4 scale(const Tensor4& a, double s) {
  Tensor4 out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

inline void add_inplace(Tensor4& acc, const Tensor4& b) {
  require_same_shape(acc, b, "add_inplace");
  auto o = acc.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
}

// Axis bitmask for reductions.
enum Axis : unsigned {
  kAxisT = 1u,
  kAxisC = 2u,
  kAxisW = 4u,
  kAxisH = 8u,
  kAxisAll = 15u,
};

enum class ReduceKind { sum, mean };

// Reduced axes become size 1. Each output element accumulates its inputs in
// ascending flat-index order, so results are bit-reproducible.
inline Tensor4 reduce(const Tensor4& x, unsigned axes, ReduceKind kind) {
  if ((axes & kAxisAll) == 0 || (axes & ~static_cast<unsigned>(kAxisAll)) != 0) {
    throw InvalidArgument("reduce: axes must be a nonempty subset of {T,C,W,H}");
  }
  const Shape& s = x.shape();
  Shape r{(axes & kAxisT) ? 1 : s.t, (axes & kAxisC) ? 1 : s.c,
          (axes & kAxisW) ? 1 : s.w, (axes & kAxisH) ? 1 : s.h};
  Tensor4 out(r, 0.0);
  std::int64_t i = 0;
  for (std::int64_t t = 0; t < s.t; ++t)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t w = 0; w < s.w; ++w)
        for (std::int64_t h = 0; h < s.h; ++h, ++i) {
          out(r.t == 1 ? 0 : t, r.c == 1 ? 0 : c, r.w == 1 ? 0 : w,
              r.h == 1 ? 0 : h) += x[i];
        }
  if (kind == ReduceKind::mean) {
    const double count = static_cast<double>(s.numel() / r.numel());
    for (double& v : out.data()) v /= count;
  }
  return out;
}

inline double sum_all(const Tensor4& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

inline double dot(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

inline bool all_finite(const Tensor4& x) {
  return std::all_of(x.data().begin(), x.data().end(),
                     [](double v) { return std::isfinite(v); });
}

// Copy of instances [first, first + count).
inline Tensor4 slice_batch(const Tensor4& x, std::int64_t first, std::int64_t count) {
  const Shape& s = x.shape();
  if (first < 0 || count < 1 || first + count > s.t) {
    throw InvalidArgument("slice_batch: range out of bounds for " + s.str());
  }
  const auto per = s.c * s.plane();
  std::vector<double> v(x.values().begin() + first * per,
                        x.values().begin() + (first + count) * per);
  return Tensor4(Shape{count, s.c, s.w, s.h}, std::move(v));
}

// Stack equal-shaped tensors along T.
inline Tensor4 concat_batch(std::span<const Tensor4> parts) {
  if (parts.empty()) throw InvalidArgument("concat_batch: no tensors");
  Shape s = parts.front().shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const Shape& q = p.shape();
    if (q.c != s.c || q.w != s.w || q.h != s.h) {
      throw ShapeMismatch("concat_batch: " + q.str() + " vs " + s.str());
    }
    total += q.t;
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(total * s.c * s.plane()));
  for (const auto& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  s.t = total;
  return Tensor4(s, std::move(v));
}

// Concatenate along C (per instance).
inline Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.t != sb.t || sa.w != sb.w || sa.h != sb.h) {
    throw ShapeMismatch("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor4 out(Shape{sa.t, sa.c + sb.c, sa.w, sa.h});
  for (std::int64_t t = 0; t < sa.t; ++t) {
    auto ia = a.instance(t);
    auto ib = b.instance(t);
    auto dst = out.data().begin() + out.index(t, 0, 0, 0);
    dst = std::copy(ia.begin(), ia.end(), dst);
    std::copy(ib.begin(), ib.end(), dst);
  }
  return out;
}

// First `channels` channels of each instance.
inline Tensor4 take_channels(const Tensor4& x, std::int64_t channels) {
  const Shape& s = x.shape();
  if (channels < 1 || channels > s.c) {
    throw InvalidArgument("take_channels: bad channel count");
  }
  Tensor4 out(Shape{s.t, channels, s.w, s.h});
  for (std::int64_t t = 0; t < s.t; ++t) {
    auto src = x.instance(t);
    std::copy(src.begin(), src.begin() + channels * s.plane(),
              out.data().begin() + out.index(t, 0, 0, 0));
  }
  return out;
}

}  // namespace normkit
