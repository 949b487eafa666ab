#pragma once

// Depth-estimation error and accuracy measures over valid pixels, with
// optional cropping, prediction clamping and ground-truth masking.
//
// Orientation: `pred` is the estimate, `gt` the reference; relative errors
// divide by the reference. rmse_log uses natural logs, log10 base-10 logs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>

#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::metrics {

struct MetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double log10 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t valid_pixel_count = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct CropRect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const CropRect&, const CropRect&) = default;
};

struct EvalOptions {
  std::optional<CropRect> crop;
  double depth_min = 1e-3;
  double depth_max = 80.0;
  double invalid_threshold = 1e-3;
};

inline constexpr double kDeltaBase = 1.25;

/// Fractional crop rectangle: rows [top_frac*h, bottom_frac*h), columns
/// [left_frac*w, right_frac*w), every bound rounded down.
struct FractionalCrop {
  double top_frac;
  double bottom_frac;
  double left_frac;
  double right_frac;

  CropRect resolve(std::size_t h, std::size_t w) const {
    const auto t = static_cast<std::size_t>(std::floor(top_frac * static_cast<double>(h)));
    const auto b = static_cast<std::size_t>(std::floor(bottom_frac * static_cast<double>(h)));
    const auto l = static_cast<std::size_t>(std::floor(left_frac * static_cast<double>(w)));
    const auto r = static_cast<std::size_t>(std::floor(right_frac * static_cast<double>(w)));
    if (b <= t || r <= l) throw ShapeError("fractional crop collapses to an empty rectangle");
    return CropRect{t, l, b - t, r - l};
  }
};

/// The community-standard evaluation crops (external convention, not
/// derived here): outdoor (KITTI-style) and indoor (NYU-style, 45:471 x 41:601
/// on 480x640).
inline constexpr FractionalCrop kOutdoorEvalCrop{0.40810811, 0.99189189, 0.03594771, 0.96405229};
inline constexpr FractionalCrop kIndoorEvalCrop{45.0 / 480.0, 471.0 / 480.0, 41.0 / 640.0, 601.0 / 640.0};

template <typename T>
Tensor<T> center_crop(const Tensor<T>& image, const CropRect& r) {
  const Shape& s = image.shape();
  if (r.height == 0 || r.width == 0 || r.top + r.height > s.h || r.left + r.width > s.w) {
    throw ShapeError("crop (" + std::to_string(r.top) + "," + std::to_string(r.left) + "," +
                     std::to_string(r.height) + "," + std::to_string(r.width) + ") outside image " + s.str());
  }
  Tensor<T> out(Shape{s.n, s.c, r.height, r.width});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < r.height; ++y) {
        for (std::size_t x = 0; x < r.width; ++x) out.at(n, c, y, x) = image.at(n, c, r.top + y, r.left + x);
      }
    }
  }
  return out;
}

namespace detail {

template <typename T>
MetricsReport evaluate_pixels(const Tensor<T>& pred, const Tensor<T>& gt, const EvalOptions& opts) {
  if (!(opts.depth_min > 0.0) || !(opts.depth_max > opts.depth_min)) {
    throw ShapeError("evaluate: depth clamp must satisfy 0 < min < max");
  }
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, log10 = 0;
  std::size_t d1 = 0, d2 = 0, d3 = 0, count = 0;
  const double t1 = kDeltaBase, t2 = kDeltaBase * kDeltaBase, t3 = kDeltaBase * kDeltaBase * kDeltaBase;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = static_cast<double>(gt[i]);
    if (!(g > opts.invalid_threshold)) continue;
    const double p = std::clamp(static_cast<double>(pred[i]), opts.depth_min, opts.depth_max);
    const double diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    log10 += std::abs(std::log10(p) - std::log10(g));
    const double ratio = std::max(p / g, g / p);
    if (ratio < t1) ++d1;
    if (ratio < t2) ++d2;
    if (ratio < t3) ++d3;
    ++count;
  }
  if (count == 0) throw ShapeError("evaluate: no valid ground-truth pixels");
  const double n = static_cast<double>(count);
  MetricsReport r;
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(sq / n);
  r.rmse_log = std::sqrt(sq_log / n);
  r.log10 = log10 / n;
  r.delta1 = static_cast<double>(d1) / n;
  r.delta2 = static_cast<double>(d2) / n;
  r.delta3 = static_cast<double>(d3) / n;
  r.valid_pixel_count = count;
  return r;
}

}  // namespace detail

/// Metrics over an N x 1 x H x W batch; pixels of all images are pooled.
template <typename T>
MetricsReport evaluate(const Tensor<T>& pred, const Tensor<T>& gt, const EvalOptions& opts = {}) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("evaluate: prediction " + pred.shape().str() + " vs ground truth " + gt.shape().str());
  }
  if (pred.c() != 1) throw ShapeError("evaluate: depth maps must have one channel");
  if (opts.crop) return detail::evaluate_pixels(center_crop(pred, *opts.crop), center_crop(gt, *opts.crop), opts);
  return detail::evaluate_pixels(pred, gt, opts);
}

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Human-readable key=value block, one field per line.
inline std::string to_key_value(const MetricsReport& r) {
  std::ostringstream os;
  os << "abs_rel=" << format_fixed(r.abs_rel) << "\n"
     << "sq_rel=" << format_fixed(r.sq_rel) << "\n"
     << "rmse=" << format_fixed(r.rmse) << "\n"
     << "rmse_log=" << format_fixed(r.rmse_log) << "\n"
     << "log10=" << format_fixed(r.log10) << "\n"
     << "delta1=" << format_fixed(r.delta1) << "\n"
     << "delta2=" << format_fixed(r.delta2) << "\n"
     << "delta3=" << format_fixed(r.delta3) << "\n"
     << "valid_pixels=" << r.valid_pixel_count << "\n";
  return os.str();
}

inline constexpr const char* kRecordFields = "abs_rel,sq_rel,rmse,rmse_log,log10,delta1,delta2,delta3,valid_pixels";

/// Single comma-separated record in kRecordFields order, 6 decimals.
inline std::string to_record(const MetricsReport& r) {
  std::string s;
  for (double v : {r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.log10, r.delta1, r.delta2, r.delta3}) {
    s += format_fixed(v);
    s += ',';
  }
  s += std::to_string(r.valid_pixel_count);
  return s;
}

}  // namespace nanodepth::metrics
