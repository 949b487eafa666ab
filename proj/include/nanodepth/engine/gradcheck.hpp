#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nanodepth/engine/rng.hpp"
#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor of the relative error, so gradients that are zero up
  // to rounding are compared absolutely.
  double floor = 1e-3;
  std::uint64_t seed = 1234;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares an analytic backward pass against central finite differences.
///
/// The scalar under test is L = sum(r * forward(inputs)) for a fixed random
/// projection r, so backward receives dy = r. `forward` maps the input list
/// to one output tensor; `backward(inputs, dy)` returns one gradient per input.
/// Every element of every input is perturbed.
template <typename Forward, typename Backward>
GradCheckResult grad_check(Forward&& forward, Backward&& backward, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opt = {}) {
  const Tensor<double> y0 = forward(inputs);
  Rng rng(opt.seed);
  Tensor<double> proj(y0.shape());
  for (std::size_t i = 0; i < proj.size(); ++i) proj[i] = rng.normal();

  auto loss = [&](const std::vector<Tensor<double>>& in) {
    const Tensor<double> y = forward(in);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += proj[i] * y[i];
    return acc;
  };

  const std::vector<Tensor<double>> analytic = backward(inputs, proj);
  if (analytic.size() != inputs.size()) throw ShapeError("grad_check: backward returned wrong gradient count");

  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (analytic[k].shape() != inputs[k].shape()) throw ShapeError("grad_check: gradient shape mismatch");
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + opt.step;
      const double up = loss(inputs);
      inputs[k][i] = saved - opt.step;
      const double down = loss(inputs);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = relative_error(analytic[k][i], numeric, opt.floor);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_input = k;
        res.worst_index = i;
        res.worst_analytic = analytic[k][i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

/// Scalar form: |f'(x) - central difference| relative to max(|f'|, |fd|, floor).
template <typename F, typename DF>
double grad_check_scalar(F&& f, DF&& df, double x, const GradCheckOptions& opt = {}) {
  const double numeric = (f(x + opt.step) - f(x - opt.step)) / (2.0 * opt.step);
  return relative_error(df(x), numeric, opt.floor);
}

}  // namespace nanodepth
