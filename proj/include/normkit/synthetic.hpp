#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "normkit/io.hpp"
#include "normkit/rng.hpp"

namespace normkit {

// Procedural stand-ins for photographs and paintings, used by the demo data
// command and the tests.

/// Smooth colour gradient with a few filled discs and boxes.
inline ImageRGB synth_content(std::uint64_t seed, std::int64_t width, std::int64_t height) {
  RngStream rng(seed);
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * rng.next_uniform();
    gx[c] = 0.6 * (rng.next_uniform() - 0.5);
    gy[c] = 0.6 * (rng.next_uniform() - 0.5);
  }
  struct Blob {
    bool disc;
    double cx, cy, r;
    double col[3];
  };
  Blob blobs[4];
  for (auto& b : blobs) {
    b.disc = rng.next_uniform() < 0.5;
    b.cx = rng.next_uniform();
    b.cy = rng.next_uniform();
    b.r = 0.1 + 0.2 * rng.next_uniform();
    for (double& v : b.col) v = rng.next_uniform();
  }
  ImageRGB img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * width * height))};
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
      double px[3];
      for (int c = 0; c < 3; ++c) px[c] = base[c] + gx[c] * (u - 0.5) + gy[c] * (v - 0.5);
      for (const auto& b : blobs) {
        const double dx = u - b.cx;
        const double dy = v - b.cy;
        const bool inside = b.disc ? dx * dx + dy * dy < b.r * b.r
                                   : std::abs(dx) < b.r && std::abs(dy) < 0.6 * b.r;
        if (inside) {
          for (int c = 0; c < 3; ++c) px[c] = b.col[c];
        }
      }
      for (int c = 0; c < 3; ++c) {
        img.pixels[static_cast<std::size_t>((y * width + x) * 3 + c)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(px[c], 0.0, 1.0) * 255.0));
      }
    }
  return img;
}

/// High-contrast diagonal stripes in two seeded colours.
inline ImageRGB synth_style(std::uint64_t seed, std::int64_t width, std::int64_t height) {
  RngStream rng(seed);
  double a[3], b[3];
  for (int c = 0; c < 3; ++c) {
    a[c] = rng.next_uniform();
    b[c] = 1.0 - a[c];
  }
  const double period = 4.0 + 4.0 * rng.next_uniform();
  const double angle = std::numbers::pi * rng.next_uniform();
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  ImageRGB img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * width * height))};
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) {
      const double proj = ca * static_cast<double>(x) + sa * static_cast<double>(y);
      const double s = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * proj / period);
      for (int c = 0; c < 3; ++c) {
        const double v = s * a[c] + (1.0 - s) * b[c];
        img.pixels[static_cast<std::size_t>((y * width + x) * 3 + c)] =
            static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  return img;
}

}  // namespace normkit
