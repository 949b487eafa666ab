#pragma once

#include <cmath>
#include <cstddef>

#include "nanodepth/engine/rng.hpp"
#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth {

/// I.i.d. N(0, 1/fan_in) draws in row-major element order.
template <typename T = float>
Tensor<T> lecun_normal_init(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ShapeError("lecun_normal_init: fan_in must be >= 1");
  Tensor<T> t(shape);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.normal() * stddev);
  return t;
}

}  // namespace nanodepth
