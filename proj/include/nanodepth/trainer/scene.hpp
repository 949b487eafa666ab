#pragma once

// Procedural depth scenes: a tilted background plane with axis-aligned
// rectangles in front of it, rendered to RGB by fixed monotone shadings.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "nanodepth/engine/rng.hpp"
#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::trainer {

struct SceneConfig {
  std::size_t height = 48;
  std::size_t width = 64;
  std::size_t min_rects = 0;
  std::size_t max_rects = 4;
  double near = 1.0;
  double far = 10.0;
  double noise = 0.02;
  std::uint64_t seed = 1;
};

inline constexpr std::size_t kSceneAlign = 16;

inline void validate_scene_config(const SceneConfig& c) {
  if (c.height == 0 || c.width == 0 || c.height % kSceneAlign != 0 || c.width % kSceneAlign != 0) {
    throw ValidationError("scene", "resolution must be a positive multiple of " + std::to_string(kSceneAlign));
  }
  if (!(c.near > 0.0) || !(c.far > c.near)) throw ValidationError("scene", "depth range needs 0 < near < far");
  if (c.min_rects > c.max_rects) throw ValidationError("scene", "min_rects exceeds max_rects");
  if (!(c.noise >= 0.0)) throw ValidationError("scene", "noise must be non-negative");
}

template <typename T = float>
struct Scene {
  Tensor<T> rgb;    // 1 x 3 x h x w
  Tensor<T> depth;  // 1 x 1 x h x w
};

/// Per-channel shading of normalized depth q in [0, 1]; each is strictly decreasing.
inline double shade(std::size_t channel, double q) {
  switch (channel) {
    case 0: return 1.0 - q;
    case 1: return (1.0 - q) * (1.0 - q);
    default: return 0.5 + 0.5 * std::cos(std::numbers::pi * q);
  }
}

template <typename T = float>
Scene<T> generate_scene(const SceneConfig& c, Rng& rng) {
  validate_scene_config(c);
  const std::size_t h = c.height, w = c.width;
  std::vector<double> d(h * w);

  // background: t = a*y' + (1-a)*x', optionally mirrored, mapped into a random sub-range
  const double a = rng.uniform();
  const bool flip_y = rng.bernoulli(0.5), flip_x = rng.bernoulli(0.5);
  double lo = rng.uniform(), hi = rng.uniform();
  if (lo > hi) std::swap(lo, hi);
  for (std::size_t y = 0; y < h; ++y) {
    double yn = h > 1 ? static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
    if (flip_y) yn = 1.0 - yn;
    for (std::size_t x = 0; x < w; ++x) {
      double xn = w > 1 ? static_cast<double>(x) / static_cast<double>(w - 1) : 0.0;
      if (flip_x) xn = 1.0 - xn;
      const double t = lo + (hi - lo) * (a * yn + (1.0 - a) * xn);
      d[y * w + x] = c.near + (c.far - c.near) * t;
    }
  }

  struct Rect {
    std::size_t top, left, bottom, right;
    double depth;
  };
  const auto count = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(c.min_rects), static_cast<std::int64_t>(c.max_rects)));
  std::vector<Rect> rects;
  for (std::size_t k = 0; k < count; ++k) {
    Rect r{};
    const auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)); };
    std::size_t y0 = pick(h), y1 = pick(h), x0 = pick(w), x1 = pick(w);
    r.top = std::min(y0, y1);
    r.bottom = std::max(y0, y1) + 1;
    r.left = std::min(x0, x1);
    r.right = std::max(x0, x1) + 1;
    r.depth = rng.uniform(c.near, c.far);
    rects.push_back(r);
  }
  // far to near, so nearer rectangles occlude
  std::stable_sort(rects.begin(), rects.end(), [](const Rect& p, const Rect& q) { return p.depth > q.depth; });
  for (const auto& r : rects) {
    for (std::size_t y = r.top; y < r.bottom; ++y) {
      for (std::size_t x = r.left; x < r.right; ++x) d[y * w + x] = r.depth;
    }
  }

  Scene<T> s{Tensor<T>(Shape{1, 3, h, w}), Tensor<T>(Shape{1, 1, h, w})};
  for (std::size_t i = 0; i < h * w; ++i) {
    d[i] = std::clamp(d[i], c.near, c.far);
    s.depth[i] = static_cast<T>(d[i]);
  }
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      const double q = (d[i] - c.near) / (c.far - c.near);
      const double n = c.noise > 0.0 ? c.noise * rng.normal() : 0.0;
      s.rgb[ch * h * w + i] = static_cast<T>(shade(ch, q) + n);
    }
  }
  return s;
}

/// Scene `index` of the stream identified by `stream`; independent of any
/// other scene's generation.
template <typename T = float>
Scene<T> scene_at(const SceneConfig& c, std::uint64_t stream, std::uint64_t index) {
  Rng rng = Rng(c.seed).fork(stream).fork(index);
  return generate_scene<T>(c, rng);
}

/// Stacks scenes of the given indices into N x 3 x h x w and N x 1 x h x w tensors.
template <typename T = float>
Scene<T> scene_batch(const SceneConfig& c, std::uint64_t stream, const std::vector<std::uint64_t>& indices) {
  const std::size_t n = indices.size(), plane = c.height * c.width;
  Scene<T> b{Tensor<T>(Shape{n, 3, c.height, c.width}), Tensor<T>(Shape{n, 1, c.height, c.width})};
  for (std::size_t k = 0; k < n; ++k) {
    const Scene<T> s = scene_at<T>(c, stream, indices[k]);
    std::copy(s.rgb.values().begin(), s.rgb.values().end(), b.rgb.values().begin() + static_cast<std::ptrdiff_t>(k * 3 * plane));
    std::copy(s.depth.values().begin(), s.depth.values().end(), b.depth.values().begin() + static_cast<std::ptrdiff_t>(k * plane));
  }
  return b;
}

}  // namespace nanodepth::trainer
