#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nanodepth/arch/network.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::trainer {

struct AdamOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions opt;
  std::uint64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::vector<bool> frozen;  // entries never updated (running statistics)
};

template <typename T>
AdamState<T> make_adam_state(const arch::ParameterSet<T>& ps, const AdamOptions& opt = {},
                             std::vector<bool> frozen = {}) {
  AdamState<T> s;
  s.opt = opt;
  for (const auto& p : ps.tensors) {
    s.m.emplace_back(p.shape(), T(0));
    s.v.emplace_back(p.shape(), T(0));
  }
  if (frozen.empty()) frozen.assign(ps.size(), false);
  if (frozen.size() != ps.size()) throw ShapeError("adam: frozen mask length differs from parameter count");
  s.frozen = std::move(frozen);
  return s;
}

/// State whose frozen mask follows the graph's non-learnable entries.
template <typename T>
AdamState<T> make_adam_state(const arch::NetworkGraph& g, const arch::ParameterSet<T>& ps,
                             const AdamOptions& opt = {}) {
  std::vector<bool> frozen;
  for (const auto& e : g.params()) frozen.push_back(!e.learnable);
  return make_adam_state(ps, opt, std::move(frozen));
}

/// One bias-corrected Adam update. Moments are kept in T; the per-element
/// update is formed in double.
template <typename T>
void adam_step(AdamState<T>& s, arch::ParameterSet<T>& ps, const arch::ParameterSet<T>& grads) {
  if (ps.size() != s.m.size() || grads.size() != ps.size()) {
    throw ShapeError("adam: state, parameters and gradients disagree in count");
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (ps[k].shape() != s.m[k].shape() || grads[k].shape() != ps[k].shape()) {
      throw ShapeError("adam: shape mismatch at parameter " + std::to_string(k));
    }
  }
  ++s.t;
  const double b1 = s.opt.beta1, b2 = s.opt.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (s.frozen[k]) continue;
    auto& p = ps[k];
    auto& m = s.m[k];
    auto& v = s.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = s.opt.lr * (mi / c1) / (std::sqrt(vi / c2) + s.opt.epsilon);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - step);
    }
  }
}

}  // namespace nanodepth::trainer
