#pragma once

#include <cmath>
#include <string>

#include "nanodepth/errors.hpp"

namespace nanodepth::netscore {

/// a: accuracy in percent, p: parameters in millions, m: MACs in billions.
struct NetScoreInputs {
  double a = 100.0;
  double p = 1.0;
  double m = 1.0;
  double kappa = 0.7;
  double beta = 0.15;
  double gamma = 0.15;
};

/// 100 * delta1 * (1 - abs_rel).
inline double composite_accuracy(double delta1, double abs_rel) {
  if (!(delta1 >= 0.0 && delta1 <= 1.0)) throw DomainError("composite_accuracy: delta1 must lie in [0, 1]");
  if (!(abs_rel >= 0.0)) throw DomainError("composite_accuracy: abs_rel must be non-negative");
  if (!(abs_rel < 1.0)) throw DomainError("composite_accuracy: abs_rel must be below 1");
  return 100.0 * delta1 * (1.0 - abs_rel);
}

/// 20 * log10(a^kappa / (p^beta * m^gamma)).
inline double netscore(const NetScoreInputs& in) {
  if (!(in.a > 0.0) || !(in.p > 0.0) || !(in.m > 0.0)) {
    throw DomainError("netscore: accuracy, params and MACs must be positive");
  }
  if (!(in.kappa > 0.0) || !(in.beta > 0.0) || !(in.gamma > 0.0)) {
    throw DomainError("netscore: exponents must be positive");
  }
  return 20.0 * (in.kappa * std::log10(in.a) - in.beta * std::log10(in.p) - in.gamma * std::log10(in.m));
}

}  // namespace nanodepth::netscore
