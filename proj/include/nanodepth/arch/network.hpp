#pragma once

// Execution of a NetworkGraph: parameter initialization, forward pass (with
// an optional tape of intermediates) and the reverse pass over that tape.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nanodepth/arch/graph.hpp"
#include "nanodepth/engine/init.hpp"
#include "nanodepth/engine/ops.hpp"
#include "nanodepth/engine/rng.hpp"

namespace nanodepth::arch {

/// Tensors aligned with NetworkGraph::params().
template <typename T>
struct ParameterSet {
  std::vector<Tensor<T>> tensors;

  std::size_t size() const noexcept { return tensors.size(); }
  Tensor<T>& operator[](std::size_t i) { return tensors[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors[i]; }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

/// LeCun-normal conv weights, zero biases, unit batchnorm scale and running
/// variance. Draws happen in parameter-table order.
template <typename T = float>
ParameterSet<T> init_parameters(const NetworkGraph& g, Rng& rng) {
  ParameterSet<T> ps;
  ps.tensors.reserve(g.params().size());
  for (const auto& e : g.params()) {
    switch (e.init) {
      case InitRule::kLecunNormal: ps.tensors.push_back(lecun_normal_init<T>(e.shape, e.fan_in, rng)); break;
      case InitRule::kZeros: ps.tensors.emplace_back(e.shape, T(0)); break;
      case InitRule::kOnes: ps.tensors.emplace_back(e.shape, T(1)); break;
    }
  }
  return ps;
}

template <typename T = float>
ParameterSet<T> zero_parameters(const NetworkGraph& g) {
  ParameterSet<T> ps;
  for (const auto& e : g.params()) ps.tensors.emplace_back(e.shape, T(0));
  return ps;
}

template <typename T>
void check_parameters(const NetworkGraph& g, const ParameterSet<T>& ps) {
  if (ps.size() != g.params().size()) {
    throw ShapeError("parameter set has " + std::to_string(ps.size()) + " tensors, graph expects " +
                     std::to_string(g.params().size()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].shape() != g.params()[i].shape) {
      throw ShapeError("parameter " + g.params()[i].name + " has shape " + ps[i].shape().str() + ", expected " +
                       g.params()[i].shape.str());
    }
  }
}

enum class Mode { kInference, kTraining };

template <typename T>
struct NodeCache {
  // pre-activation or intermediate tensors, by node kind:
  //  conv:  z (pre-SELU) when the conv is activated
  //  pbep:  a1 proj1 out, b1 bn out, s1, a2, s2, a3, s3
  //  ep:    a1, s1, a2, s2
  std::vector<Tensor<T>> t;
  BatchNormCache<T> bn;
};

/// Intermediates recorded by a forward pass, consumed by backward().
template <typename T>
struct Tape {
  Mode mode = Mode::kInference;
  Tensor<T> input;
  std::vector<Tensor<T>> outputs;  // raw node outputs (before the head affine map)
  std::vector<NodeCache<T>> caches;
};

namespace detail {

template <typename T>
std::span<const T> vals(const Tensor<T>& t) {
  return t.values();
}

template <typename T>
Tensor<T> run_pbep(const Node& n, const ParameterSet<T>& ps, const Tensor<T>& x, Mode mode, const SeluParams& sp,
                   NodeCache<T>* cache) {
  const auto& s = n.pbep;
  const auto& P = n.params;
  Tensor<T> a1 = pointwise_conv(x, ps[P[0]]);
  Tensor<T> b1;
  BatchNormCache<T> bn;
  const T eps = static_cast<T>(s.bn_epsilon);
  if (mode == Mode::kTraining) {
    b1 = batchnorm_train(a1, vals(ps[P[1]]), vals(ps[P[2]]), eps, bn);
  } else {
    b1 = batchnorm(a1, vals(ps[P[3]]), vals(ps[P[4]]), vals(ps[P[1]]), vals(ps[P[2]]), eps);
  }
  Tensor<T> s1 = selu(b1, sp);
  Tensor<T> a2 = pointwise_conv(s1, ps[P[5]]);
  Tensor<T> s2 = selu(a2, sp);
  Tensor<T> a3 = depthwise_conv2d(s2, ps[P[6]], ConvOptions{1, s.dw_kernel / 2});
  Tensor<T> s3 = selu(a3, sp);
  Tensor<T> y = pointwise_conv(s3, ps[P[7]]);
  if (cache) {
    cache->t = {std::move(a1), std::move(b1), std::move(s1), std::move(a2), std::move(s2), std::move(a3), std::move(s3)};
    cache->bn = std::move(bn);
  }
  return y;
}

template <typename T>
Tensor<T> run_ep(const Node& n, const ParameterSet<T>& ps, const Tensor<T>& x, const SeluParams& sp,
                 NodeCache<T>* cache) {
  const auto& P = n.params;
  Tensor<T> a1 = pointwise_conv(x, ps[P[0]]);
  Tensor<T> s1 = selu(a1, sp);
  Tensor<T> a2 = depthwise_conv2d(s1, ps[P[1]], ConvOptions{1, n.ep.dw_kernel / 2});
  Tensor<T> s2 = selu(a2, sp);
  Tensor<T> y = pointwise_conv(s2, ps[P[2]]);
  if (cache) cache->t = {std::move(a1), std::move(s1), std::move(a2), std::move(s2)};
  return y;
}

}  // namespace detail

/// Runs the graph on an n x C x H x W batch. Training mode normalizes with
/// batch statistics (recorded in the tape); inference mode uses the running
/// statistics. Parameters are never modified here; see update_running_stats.
template <typename T>
Tensor<T> forward(const NetworkGraph& g, const ParameterSet<T>& ps, const Tensor<T>& input, Mode mode = Mode::kInference,
                  Tape<T>* tape = nullptr) {
  check_parameters(g, ps);
  const Shape& is = g.input_shape();
  if (input.c() != is.c || input.h() != is.h || input.w() != is.w) {
    throw ShapeError("network input " + input.shape().str() + " does not match configured 1x" +
                     std::to_string(is.c) + "x" + std::to_string(is.h) + "x" + std::to_string(is.w));
  }
  const SeluParams sp{g.selu_lambda, g.selu_alpha};
  const auto& nodes = g.nodes();
  const std::size_t count = nodes.size();

  // last consumer of each node, to release outputs early when no tape is kept
  std::vector<std::size_t> last_use(count, 0);
  for (const auto& n : nodes) {
    for (std::size_t in : n.inputs) {
      if (in != NetworkGraph::kInput) last_use[in] = n.id;
    }
  }

  std::vector<Tensor<T>> out(count);
  std::vector<NodeCache<T>> caches(tape ? count : 0);
  auto fetch = [&](std::size_t id) -> const Tensor<T>& { return id == NetworkGraph::kInput ? input : out[id]; };

  for (const auto& n : nodes) {
    NodeCache<T>* cache = tape ? &caches[n.id] : nullptr;
    const Tensor<T>& x = fetch(n.inputs[0]);
    switch (n.kind) {
      case NodeKind::kConv: {
        const auto& c = n.conv;
        std::span<const T> bias = c.bias ? ps[n.params[1]].values() : std::span<const T>{};
        Tensor<T> z = conv2d(x, ps[n.params[0]], bias, ConvOptions{c.stride, c.pad});
        if (c.selu) {
          out[n.id] = selu(z, sp);
          if (cache) cache->t = {std::move(z)};
        } else {
          out[n.id] = std::move(z);
        }
        break;
      }
      case NodeKind::kPool: out[n.id] = pool2(x, n.pool); break;
      case NodeKind::kPbep: out[n.id] = detail::run_pbep(n, ps, x, mode, sp, cache); break;
      case NodeKind::kEp: out[n.id] = detail::run_ep(n, ps, x, sp, cache); break;
      case NodeKind::kConcat: out[n.id] = concat_channels(x, fetch(n.inputs[1])); break;
      case NodeKind::kUpsample: out[n.id] = bilinear_upsample2x(x); break;
    }
    if (!tape) {
      for (std::size_t in : n.inputs) {
        if (in != NetworkGraph::kInput && last_use[in] == n.id) out[in] = Tensor<T>();
      }
    }
  }

  Tensor<T> y = out[count - 1];
  if (g.output_offset != 0.0 || g.output_scale != 1.0) {
    const T off = static_cast<T>(g.output_offset), sc = static_cast<T>(g.output_scale);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = off + sc * y[i];
  }
  if (tape) {
    tape->mode = mode;
    tape->input = input;
    tape->outputs = std::move(out);
    tape->caches = std::move(caches);
  }
  return y;
}

/// Moves every PBEP's running statistics toward the batch statistics
/// recorded in a training-mode tape.
template <typename T>
void update_running_stats(const NetworkGraph& g, ParameterSet<T>& ps, const Tape<T>& tape) {
  if (tape.mode != Mode::kTraining) return;
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::kPbep) continue;
    const auto& bn = tape.caches[n.id].bn;
    nanodepth::update_running_stats<T>(ps[n.params[3]].values(), ps[n.params[4]].values(), bn.mean, bn.var,
                            static_cast<T>(n.pbep.bn_momentum));
  }
}

template <typename T>
struct Gradients {
  ParameterSet<T> params;  // zero for non-learnable entries
  Tensor<T> input;
};

/// Reverse pass. `dy` is the gradient of the loss w.r.t. the network output
/// (after the head affine map).
template <typename T>
Gradients<T> backward(const NetworkGraph& g, const ParameterSet<T>& ps, const Tape<T>& tape, const Tensor<T>& dy) {
  const auto& nodes = g.nodes();
  const std::size_t count = nodes.size();
  if (tape.outputs.size() != count) throw ShapeError("backward: tape does not belong to this graph");
  if (dy.shape() != tape.outputs[count - 1].shape()) {
    throw ShapeError("backward: dy " + dy.shape().str() + " vs output " + tape.outputs[count - 1].shape().str());
  }
  const SeluParams sp{g.selu_lambda, g.selu_alpha};
  Gradients<T> grads{zero_parameters<T>(g), Tensor<T>(tape.input.shape())};
  std::vector<std::optional<Tensor<T>>> d(count);
  {
    Tensor<T> top = dy;
    if (g.output_scale != 1.0) {
      const T sc = static_cast<T>(g.output_scale);
      for (std::size_t i = 0; i < top.size(); ++i) top[i] *= sc;
    }
    d[count - 1] = std::move(top);
  }
  auto fetch = [&](std::size_t id) -> const Tensor<T>& {
    return id == NetworkGraph::kInput ? tape.input : tape.outputs[id];
  };
  auto accumulate = [&](std::size_t id, Tensor<T>&& grad) {
    if (id == NetworkGraph::kInput) {
      grads.input += grad;
    } else if (d[id]) {
      *d[id] += grad;
    } else {
      d[id] = std::move(grad);
    }
  };
  auto add_param_grad = [&](std::size_t p, const Tensor<T>& grad) { grads.params[p] += grad; };
  auto add_param_vec = [&](std::size_t p, const std::vector<T>& v) {
    auto dst = grads.params[p].values();
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
  };

  for (std::size_t idx = count; idx-- > 0;) {
    const Node& n = nodes[idx];
    if (!d[idx]) continue;
    Tensor<T> g_out = std::move(*d[idx]);
    d[idx].reset();
    const Tensor<T>& x = fetch(n.inputs[0]);
    const NodeCache<T>& cache = tape.caches[idx];
    switch (n.kind) {
      case NodeKind::kConv: {
        const auto& c = n.conv;
        if (c.selu) g_out = selu_backward(cache.t[0], g_out, sp);
        auto cg = conv2d_backward(x, ps[n.params[0]], g_out, ConvOptions{c.stride, c.pad});
        add_param_grad(n.params[0], cg.weights);
        if (c.bias) add_param_grad(n.params[1], cg.bias);
        accumulate(n.inputs[0], std::move(cg.input));
        break;
      }
      case NodeKind::kPool:
        accumulate(n.inputs[0], pool2_backward(x, g_out, n.pool));
        break;
      case NodeKind::kUpsample:
        accumulate(n.inputs[0], bilinear_upsample2x_backward(x.shape(), g_out));
        break;
      case NodeKind::kConcat: {
        auto [ga, gb] = concat_channels_backward(g_out, x.c());
        accumulate(n.inputs[0], std::move(ga));
        accumulate(n.inputs[1], std::move(gb));
        break;
      }
      case NodeKind::kPbep: {
        const auto& P = n.params;
        const auto& t = cache.t;  // a1 b1 s1 a2 s2 a3 s3
        auto g4 = pointwise_conv_backward(t[6], ps[P[7]], g_out);
        add_param_grad(P[7], g4.weights);
        Tensor<T> ga3 = selu_backward(t[5], g4.input, sp);
        auto g3 = depthwise_conv2d_backward(t[4], ps[P[6]], ga3, ConvOptions{1, n.pbep.dw_kernel / 2});
        add_param_grad(P[6], g3.weights);
        Tensor<T> ga2 = selu_backward(t[3], g3.input, sp);
        auto g2 = pointwise_conv_backward(t[2], ps[P[5]], ga2);
        add_param_grad(P[5], g2.weights);
        Tensor<T> gb1 = selu_backward(t[1], g2.input, sp);
        BatchNormGrads<T> gbn;
        if (tape.mode == Mode::kTraining) {
          gbn = batchnorm_train_backward(cache.bn, ps[P[1]].values(), gb1);
        } else {
          gbn = batchnorm_backward(t[0], ps[P[3]].values(), ps[P[4]].values(), ps[P[1]].values(),
                                   static_cast<T>(n.pbep.bn_epsilon), gb1);
        }
        add_param_vec(P[1], gbn.gamma);
        add_param_vec(P[2], gbn.beta);
        auto g1 = pointwise_conv_backward(x, ps[P[0]], gbn.input);
        add_param_grad(P[0], g1.weights);
        accumulate(n.inputs[0], std::move(g1.input));
        break;
      }
      case NodeKind::kEp: {
        const auto& P = n.params;
        const auto& t = cache.t;  // a1 s1 a2 s2
        auto g3 = pointwise_conv_backward(t[3], ps[P[2]], g_out);
        add_param_grad(P[2], g3.weights);
        Tensor<T> ga2 = selu_backward(t[2], g3.input, sp);
        auto g2 = depthwise_conv2d_backward(t[1], ps[P[1]], ga2, ConvOptions{1, n.ep.dw_kernel / 2});
        add_param_grad(P[1], g2.weights);
        Tensor<T> ga1 = selu_backward(t[0], g2.input, sp);
        auto g1 = pointwise_conv_backward(x, ps[P[0]], ga1);
        add_param_grad(P[0], g1.weights);
        accumulate(n.inputs[0], std::move(g1.input));
        break;
      }
    }
  }
  return grads;
}

/// Name -> index lookup over the parameter table.
inline std::unordered_map<std::string, std::size_t> param_index(const NetworkGraph& g) {
  std::unordered_map<std::string, std::size_t> m;
  for (std::size_t i = 0; i < g.params().size(); ++i) m.emplace(g.params()[i].name, i);
  return m;
}

}  // namespace nanodepth::arch
