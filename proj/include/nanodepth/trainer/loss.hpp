#pragma once

#include <cstddef>
#include <cmath>
#include <optional>

#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::trainer {

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // d value / d pred
};

/// Mean absolute error over pixels where `mask` is nonzero (all pixels when
/// no mask is given). Gradient sign(pred - gt) / N_valid, zero at ties.
template <typename T>
LossResult<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>* mask = nullptr) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("l1_loss: prediction " + pred.shape().str() + " vs target " + gt.shape().str());
  }
  if (mask && mask->shape() != pred.shape()) throw ShapeError("l1_loss: mask shape " + mask->shape().str());
  std::size_t valid = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask || (*mask)[i] != T(0)) ++valid;
  }
  if (valid == 0) throw DomainError("l1_loss: mask selects no pixels");
  LossResult<T> r{0.0, Tensor<T>(pred.shape())};
  const double inv = 1.0 / static_cast<double>(valid);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && (*mask)[i] == T(0)) continue;
    const double diff = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    r.value += std::abs(diff);
    r.grad[i] = static_cast<T>(diff > 0 ? inv : (diff < 0 ? -inv : 0.0));
  }
  r.value *= inv;
  return r;
}

}  // namespace nanodepth::trainer
