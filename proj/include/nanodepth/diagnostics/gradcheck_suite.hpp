#pragma once

// Seeded finite-difference checks of every differentiable op and of a whole
// network, in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/arch/graph.hpp"
#include "nanodepth/arch/network.hpp"
#include "nanodepth/engine/gradcheck.hpp"
#include "nanodepth/engine/ops.hpp"
#include "nanodepth/engine/rng.hpp"
#include "nanodepth/trainer/loss.hpp"

namespace nanodepth::diagnostics {

struct CheckSummary {
  std::string name;
  std::size_t cases = 0;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
};

namespace detail {

using Inputs = std::vector<Tensor<double>>;

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

inline Tensor<double> normal(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

/// Normal draws with |x| > margin (off the SELU kink).
inline Tensor<double> off_zero(Shape s, Rng& rng, double margin = 1e-3) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = 0;
    do v = rng.normal();
    while (std::abs(v) <= margin);
    t[i] = v;
  }
  return t;
}

/// A shuffled grid with spacing 0.01 (no max-pool ties).
inline Tensor<double> distinct(Shape s, Rng& rng) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(i);
  for (std::size_t i = t.size(); i > 1; --i) {
    std::swap(t[i - 1], t[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  return t;
}

inline Tensor<double> as_tensor(const std::vector<double>& v, Shape s) { return Tensor<double>(s, v); }

template <typename MakeCase>
CheckSummary run_cases(const std::string& name, std::size_t cases, std::uint64_t seed, MakeCase&& make_case) {
  CheckSummary s{name, cases, 0, 0.0};
  Rng rng(seed);
  for (std::size_t k = 0; k < cases; ++k) {
    const GradCheckResult r = make_case(rng);
    s.elements += r.checked;
    s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error);
  }
  return s;
}

}  // namespace detail

/// One summary per op; each op is checked on `cases` random small shapes.
inline std::vector<CheckSummary> check_ops(std::size_t cases = 100, std::uint64_t seed = 1) {
  using detail::dim;
  using detail::Inputs;
  std::vector<CheckSummary> out;
  Rng seeds(seed);
  auto next_seed = [&] { return seeds.next_u64(); };

  out.push_back(detail::run_cases("conv2d", cases, next_seed(), [](Rng& rng) {
    const std::size_t k = 2 * dim(rng, 0, 2) + 1;
    const ConvOptions opt{dim(rng, 1, 2), dim(rng, 0, k / 2)};
    const std::size_t h = dim(rng, k, k + 3), w = dim(rng, k, k + 3);
    const std::size_t cin = dim(rng, 1, 3), cout = dim(rng, 1, 3);
    Inputs in{detail::normal(Shape{dim(rng, 1, 2), cin, h, w}, rng), detail::normal(Shape{cout, cin, k, k}, rng),
              detail::normal(Shape{cout, 1, 1, 1}, rng)};
    return grad_check([&](const Inputs& v) { return conv2d(v[0], v[1], v[2].values(), opt); },
                      [&](const Inputs& v, const Tensor<double>& dy) {
                        auto g = conv2d_backward(v[0], v[1], dy, opt);
                        return Inputs{g.input, g.weights, g.bias};
                      },
                      in);
  }));
  out.push_back(detail::run_cases("pointwise_conv", cases, next_seed(), [](Rng& rng) {
    const std::size_t cin = dim(rng, 1, 4), cout = dim(rng, 1, 4);
    Inputs in{detail::normal(Shape{dim(rng, 1, 2), cin, dim(rng, 1, 4), dim(rng, 1, 4)}, rng),
              detail::normal(Shape{cout, cin, 1, 1}, rng)};
    return grad_check([&](const Inputs& v) { return pointwise_conv(v[0], v[1]); },
                      [&](const Inputs& v, const Tensor<double>& dy) {
                        auto g = pointwise_conv_backward(v[0], v[1], dy);
                        return Inputs{g.input, g.weights};
                      },
                      in);
  }));
  out.push_back(detail::run_cases("depthwise_conv2d", cases, next_seed(), [](Rng& rng) {
    const std::size_t k = 2 * dim(rng, 0, 2) + 1, c = dim(rng, 1, 3);
    const ConvOptions opt{dim(rng, 1, 2), dim(rng, 0, k / 2)};
    Inputs in{detail::normal(Shape{dim(rng, 1, 2), c, dim(rng, k, k + 3), dim(rng, k, k + 3)}, rng),
              detail::normal(Shape{c, 1, k, k}, rng)};
    return grad_check([&](const Inputs& v) { return depthwise_conv2d(v[0], v[1], opt); },
                      [&](const Inputs& v, const Tensor<double>& dy) {
                        auto g = depthwise_conv2d_backward(v[0], v[1], dy, opt);
                        return Inputs{g.input, g.weights};
                      },
                      in);
  }));
  out.push_back(detail::run_cases("selu", cases, next_seed(), [](Rng& rng) {
    Inputs in{detail::off_zero(Shape{dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4)}, rng)};
    return grad_check([](const Inputs& v) { return selu(v[0]); },
                      [](const Inputs& v, const Tensor<double>& dy) { return Inputs{selu_backward(v[0], dy)}; }, in);
  }));
  out.push_back(detail::run_cases("batchnorm_train", cases, next_seed(), [](Rng& rng) {
    const std::size_t c = dim(rng, 1, 3);
    Inputs in{detail::normal(Shape{dim(rng, 1, 3), c, dim(rng, 2, 4), dim(rng, 2, 4)}, rng),
              detail::normal(Shape{c, 1, 1, 1}, rng), detail::normal(Shape{c, 1, 1, 1}, rng)};
    return grad_check(
        [](const Inputs& v) {
          BatchNormCache<double> cache;
          return batchnorm_train<double>(v[0], v[1].values(), v[2].values(), 1e-5, cache);
        },
        [](const Inputs& v, const Tensor<double>& dy) {
          BatchNormCache<double> cache;
          batchnorm_train<double>(v[0], v[1].values(), v[2].values(), 1e-5, cache);
          auto g = batchnorm_train_backward<double>(cache, v[1].values(), dy);
          return Inputs{g.input, detail::as_tensor(g.gamma, v[1].shape()), detail::as_tensor(g.beta, v[2].shape())};
        },
        in);
  }));
  out.push_back(detail::run_cases("batchnorm", cases, next_seed(), [](Rng& rng) {
    const std::size_t c = dim(rng, 1, 3);
    std::vector<double> mean(c), var(c);
    for (std::size_t i = 0; i < c; ++i) {
      mean[i] = rng.normal();
      var[i] = rng.uniform(0.2, 2.0);
    }
    Inputs in{detail::normal(Shape{dim(rng, 1, 2), c, dim(rng, 1, 3), dim(rng, 1, 3)}, rng),
              detail::normal(Shape{c, 1, 1, 1}, rng), detail::normal(Shape{c, 1, 1, 1}, rng)};
    return grad_check(
        [&](const Inputs& v) { return batchnorm<double>(v[0], mean, var, v[1].values(), v[2].values(), 1e-5); },
        [&](const Inputs& v, const Tensor<double>& dy) {
          auto g = batchnorm_backward<double>(v[0], mean, var, v[1].values(), 1e-5, dy);
          return Inputs{g.input, detail::as_tensor(g.gamma, v[1].shape()), detail::as_tensor(g.beta, v[2].shape())};
        },
        in);
  }));
  for (const PoolKind kind : {PoolKind::kAvg, PoolKind::kMax}) {
    out.push_back(detail::run_cases(kind == PoolKind::kAvg ? "avg_pool2" : "max_pool2", cases, next_seed(),
                                    [kind](Rng& rng) {
                                      Inputs in{detail::distinct(Shape{dim(rng, 1, 2), dim(rng, 1, 3),
                                                                       2 * dim(rng, 1, 3), 2 * dim(rng, 1, 3)},
                                                                 rng)};
                                      return grad_check([&](const Inputs& v) { return pool2(v[0], kind); },
                                                        [&](const Inputs& v, const Tensor<double>& dy) {
                                                          return Inputs{pool2_backward(v[0], dy, kind)};
                                                        },
                                                        in);
                                    }));
  }
  out.push_back(detail::run_cases("bilinear_upsample2x", cases, next_seed(), [](Rng& rng) {
    Inputs in{detail::normal(Shape{dim(rng, 1, 2), dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4)}, rng)};
    return grad_check([](const Inputs& v) { return bilinear_upsample2x(v[0]); },
                      [](const Inputs& v, const Tensor<double>& dy) {
                        return Inputs{bilinear_upsample2x_backward(v[0].shape(), dy)};
                      },
                      in);
  }));
  out.push_back(detail::run_cases("concat_channels", cases, next_seed(), [](Rng& rng) {
    const std::size_t n = dim(rng, 1, 2), h = dim(rng, 1, 3), w = dim(rng, 1, 3), ca = dim(rng, 1, 3);
    Inputs in{detail::normal(Shape{n, ca, h, w}, rng), detail::normal(Shape{n, dim(rng, 1, 3), h, w}, rng)};
    return grad_check([](const Inputs& v) { return concat_channels(v[0], v[1]); },
                      [ca](const Inputs&, const Tensor<double>& dy) {
                        auto [a, b] = concat_channels_backward(dy, ca);
                        return Inputs{a, b};
                      },
                      in);
  }));
  return out;
}

struct NetworkCheckOptions {
  std::size_t cases = 100;
  std::size_t params_per_case = 6;  // sampled weight elements
  std::size_t inputs_per_case = 2;  // sampled input pixels
  std::size_t batch = 1;
  arch::Mode mode = arch::Mode::kTraining;
  double step = 1e-5;
  double floor = 1e-6;
  std::size_t max_redraws = 50;  // per sampled element
  std::uint64_t seed = 1;
};

struct NetworkCheckSummary : CheckSummary {
  std::size_t redraws = 0;  // elements whose difference interval crossed a kink
};

namespace detail {

/// Which side of every kink the forward pass sits on: the sign of each SELU
/// input, the winning index of each max-pool window and the sign of each
/// L1 residual. Equal patterns at theta - h and theta + h mean the loss is
/// smooth on the whole interval.
inline std::vector<std::uint8_t> kink_pattern(const arch::NetworkGraph& g, const arch::Tape<double>& tape,
                                              const Tensor<double>& y, const Tensor<double>& target) {
  std::vector<std::uint8_t> pat;
  auto signs = [&](const Tensor<double>& t) {
    for (double v : t.values()) pat.push_back(v > 0 ? 1 : 0);
  };
  for (const auto& n : g.nodes()) {
    const auto& c = tape.caches[n.id];
    switch (n.kind) {
      case arch::NodeKind::kConv:
        if (n.conv.selu) signs(c.t[0]);
        break;
      case arch::NodeKind::kPbep:
        for (std::size_t i : {1, 3, 5}) signs(c.t[i]);
        break;
      case arch::NodeKind::kEp:
        for (std::size_t i : {0, 2}) signs(c.t[i]);
        break;
      case arch::NodeKind::kPool: {
        if (n.pool != PoolKind::kMax) break;
        const Tensor<double>& x = n.inputs[0] == arch::NetworkGraph::kInput ? tape.input : tape.outputs[n.inputs[0]];
        const Shape& s = x.shape();
        for (std::size_t b = 0; b < s.n; ++b) {
          for (std::size_t ch = 0; ch < s.c; ++ch) {
            for (std::size_t i = 0; i + 1 < s.h; i += 2) {
              for (std::size_t j = 0; j + 1 < s.w; j += 2) {
                const double v[4] = {x.at(b, ch, i, j), x.at(b, ch, i, j + 1), x.at(b, ch, i + 1, j),
                                     x.at(b, ch, i + 1, j + 1)};
                pat.push_back(static_cast<std::uint8_t>(std::max_element(v, v + 4) - v));
              }
            }
          }
        }
        break;
      }
      default: break;
    }
  }
  for (std::size_t i = 0; i < y.size(); ++i) pat.push_back(y[i] > target[i] ? 1 : 0);
  return pat;
}

}  // namespace detail

/// Gradient of the L1 loss against a target held 0.5..1.5 away from the
/// initial prediction, w.r.t. sampled weights and input pixels. Elements
/// whose difference interval crosses a kink are redrawn.
inline NetworkCheckSummary check_network(const arch::NetworkConfig& cfg, const NetworkCheckOptions& o = {}) {
  const auto g = arch::build_network(cfg);
  Rng rng(o.seed);
  NetworkCheckSummary s;
  s.name = "network";
  s.cases = o.cases;
  std::vector<std::size_t> learnable;
  for (std::size_t i = 0; i < g.params().size(); ++i) {
    if (g.params()[i].learnable) learnable.push_back(i);
  }
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)); };

  for (std::size_t k = 0; k < o.cases; ++k) {
    auto ps = arch::init_parameters<double>(g, rng);
    // nonzero biases and batchnorm shifts so every parameter kind carries gradient
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (g.params()[i].init == arch::InitRule::kZeros && g.params()[i].learnable) {
        for (auto& v : ps[i].values()) v = 0.1 * rng.normal();
      }
    }
    Shape is = g.input_shape();
    is.n = o.batch;
    Tensor<double> x = detail::normal(is, rng);
    arch::Tape<double> tape;
    const Tensor<double> y = arch::forward(g, ps, x, o.mode, &tape);
    Tensor<double> target(y.shape());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = y[i] + (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.5, 1.5);
    const auto loss = trainer::l1_loss(y, target);
    const auto grads = arch::backward(g, ps, tape, loss.grad);
    const auto base_pattern = detail::kink_pattern(g, tape, y, target);

    // Output at the current (ps, x), or nothing when a kink separates it from
    // the base point. With the residual signs fixed on the interval, the loss
    // difference is the signed mean of the output difference, which avoids
    // cancelling two O(1) loss values.
    auto smooth_output = [&](Tensor<double>& out) {
      arch::Tape<double> t;
      out = arch::forward(g, ps, x, o.mode, &t);
      return detail::kink_pattern(g, t, out, target) == base_pattern;
    };
    auto probe = [&](double& slot, double analytic) {
      const double saved = slot;
      Tensor<double> up, down;
      slot = saved + o.step;
      const bool ok_up = smooth_output(up);
      slot = saved - o.step;
      const bool ok_down = smooth_output(down);
      slot = saved;
      if (!ok_up || !ok_down) return false;
      double diff = 0.0;
      for (std::size_t i = 0; i < up.size(); ++i) diff += (y[i] > target[i] ? 1.0 : -1.0) * (up[i] - down[i]);
      diff /= static_cast<double>(up.size());
      s.max_rel_error = std::max(s.max_rel_error, relative_error(analytic, diff / (2 * o.step), o.floor));
      ++s.elements;
      return true;
    };
    for (std::size_t j = 0; j < o.params_per_case; ++j) {
      for (std::size_t attempt = 0;; ++attempt) {
        const std::size_t p = learnable[pick(learnable.size())], e = pick(ps[p].size());
        if (probe(ps[p][e], grads.params[p][e])) break;
        ++s.redraws;
        if (attempt + 1 >= o.max_redraws) throw DomainError("check_network: every probe crossed a kink");
      }
    }
    for (std::size_t j = 0; j < o.inputs_per_case; ++j) {
      for (std::size_t attempt = 0;; ++attempt) {
        const std::size_t e = pick(x.size());
        if (probe(x[e], grads.input[e])) break;
        ++s.redraws;
        if (attempt + 1 >= o.max_redraws) throw DomainError("check_network: every probe crossed a kink");
      }
    }
  }
  return s;
}

}  // namespace nanodepth::diagnostics
