#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::arch {

enum class NodeKind { kConv, kPool, kPbep, kEp, kConcat, kUpsample };

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::kConv: return "conv";
    case NodeKind::kPool: return "pool";
    case NodeKind::kPbep: return "pbep";
    case NodeKind::kEp: return "ep";
    case NodeKind::kConcat: return "concat";
    case NodeKind::kUpsample: return "upsample";
  }
  return "?";
}

struct ConvNodeSpec {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t out = 1;
  bool bias = false;
  bool selu = false;
};

enum class InitRule { kLecunNormal, kZeros, kOnes };

/// One tensor in the parameter table. Batchnorm running statistics are
/// stored here too, with `learnable` false.
struct ParamEntry {
  std::string name;
  Shape shape;
  InitRule init = InitRule::kZeros;
  std::size_t fan_in = 1;
  bool learnable = true;
};

struct Node {
  std::size_t id = 0;
  std::string name;
  NodeKind kind = NodeKind::kConv;
  std::vector<std::size_t> inputs;
  Shape out;  // per-image shape (n == 1)

  ConvNodeSpec conv;
  PoolKind pool = PoolKind::kAvg;
  PbepSpec pbep;
  EpSpec ep;

  std::vector<std::size_t> params;  // indices into NetworkGraph::params
};

/// Topologically ordered DAG over per-image shapes. Node inputs refer to
/// earlier node ids or to kInput, the network input.
class NetworkGraph {
 public:
  static constexpr std::size_t kInput = std::numeric_limits<std::size_t>::max();

  explicit NetworkGraph(Shape input) : input_(input) {
    input_.n = 1;
    if (!input_.valid()) throw ValidationError("input", "input dims must be >= 1");
  }

  const Shape& input_shape() const noexcept { return input_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<ParamEntry>& params() const noexcept { return params_; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t output() const {
    if (nodes_.empty()) throw ValidationError("", "graph has no nodes");
    return nodes_.size() - 1;
  }
  const Shape& shape_of(std::size_t id) const { return id == kInput ? input_ : nodes_.at(id).out; }
  const Node& find(const std::string& name) const {
    for (const auto& n : nodes_) {
      if (n.name == name) return n;
    }
    throw ValidationError(name, "no such node");
  }

  double output_offset = 0.0;
  double output_scale = 1.0;
  double selu_lambda = SeluParams{}.lambda;
  double selu_alpha = SeluParams{}.alpha;

  std::size_t add_conv(const std::string& name, std::size_t input, ConvNodeSpec spec) {
    const Shape in = checked_input(name, input);
    if (spec.kernel % 2 == 0 || spec.kernel == 0) throw ValidationError(name, "kernel must be odd");
    if (spec.stride == 0 || spec.out == 0) throw ValidationError(name, "stride and output channels must be >= 1");
    if (in.h + 2 * spec.pad < spec.kernel || in.w + 2 * spec.pad < spec.kernel) {
      throw ValidationError(name, "kernel larger than padded input " + in.str());
    }
    Node n = make(name, NodeKind::kConv, {input});
    n.conv = spec;
    n.out = Shape{1, spec.out, (in.h + 2 * spec.pad - spec.kernel) / spec.stride + 1,
                  (in.w + 2 * spec.pad - spec.kernel) / spec.stride + 1};
    n.params.push_back(add_param(name + ".weight", Shape{spec.out, in.c, spec.kernel, spec.kernel},
                                 InitRule::kLecunNormal, in.c * spec.kernel * spec.kernel));
    if (spec.bias) n.params.push_back(add_param(name + ".bias", Shape{spec.out, 1, 1, 1}, InitRule::kZeros, 1));
    return push(std::move(n));
  }

  std::size_t add_pool(const std::string& name, std::size_t input, PoolKind kind) {
    const Shape in = checked_input(name, input);
    if (in.h % 2 != 0 || in.w % 2 != 0) throw ValidationError(name, "pooling needs even spatial dims, got " + in.str());
    Node n = make(name, NodeKind::kPool, {input});
    n.pool = kind;
    n.out = Shape{1, in.c, in.h / 2, in.w / 2};
    return push(std::move(n));
  }

  std::size_t add_pbep(const std::string& name, std::size_t input, const PbepSpec& spec) {
    const Shape in = checked_input(name, input);
    if (spec.proj1_out == 0 || spec.proj1_out > in.c) {
      throw ValidationError(name, "proj1_out " + std::to_string(spec.proj1_out) + " must be in [1, " +
                                      std::to_string(in.c) + "]");
    }
    if (spec.expand_out < spec.proj1_out) throw ValidationError(name, "expand_out must be >= proj1_out");
    if (spec.growth_out == 0) throw ValidationError(name, "growth_out must be >= 1");
    if (spec.dw_kernel % 2 == 0) throw ValidationError(name, "depthwise kernel must be odd");
    if (!(spec.bn_epsilon > 0.0)) throw ValidationError(name, "bn_epsilon must be positive");
    if (!(spec.bn_momentum >= 0.0 && spec.bn_momentum < 1.0)) throw ValidationError(name, "bn_momentum must be in [0,1)");
    Node n = make(name, NodeKind::kPbep, {input});
    n.pbep = spec;
    n.out = Shape{1, spec.growth_out, in.h, in.w};
    const std::size_t p = spec.proj1_out, e = spec.expand_out, k = spec.dw_kernel;
    n.params = {
        add_param(name + ".proj1.weight", Shape{p, in.c, 1, 1}, InitRule::kLecunNormal, in.c),
        add_param(name + ".bn.gamma", Shape{p, 1, 1, 1}, InitRule::kOnes, 1),
        add_param(name + ".bn.beta", Shape{p, 1, 1, 1}, InitRule::kZeros, 1),
        add_param(name + ".bn.running_mean", Shape{p, 1, 1, 1}, InitRule::kZeros, 1, false),
        add_param(name + ".bn.running_var", Shape{p, 1, 1, 1}, InitRule::kOnes, 1, false),
        add_param(name + ".expand.weight", Shape{e, p, 1, 1}, InitRule::kLecunNormal, p),
        add_param(name + ".dw.weight", Shape{e, 1, k, k}, InitRule::kLecunNormal, k * k),
        add_param(name + ".proj2.weight", Shape{spec.growth_out, e, 1, 1}, InitRule::kLecunNormal, e),
    };
    return push(std::move(n));
  }

  std::size_t add_ep(const std::string& name, std::size_t input, const EpSpec& spec) {
    const Shape in = checked_input(name, input);
    if (spec.expand_out < in.c) {
      throw ValidationError(name, "expand_out " + std::to_string(spec.expand_out) + " below incoming " +
                                      std::to_string(in.c));
    }
    if (spec.out == 0) throw ValidationError(name, "out must be >= 1");
    if (spec.dw_kernel % 2 == 0) throw ValidationError(name, "depthwise kernel must be odd");
    Node n = make(name, NodeKind::kEp, {input});
    n.ep = spec;
    n.out = Shape{1, spec.out, in.h, in.w};
    const std::size_t e = spec.expand_out, k = spec.dw_kernel;
    n.params = {
        add_param(name + ".expand.weight", Shape{e, in.c, 1, 1}, InitRule::kLecunNormal, in.c),
        add_param(name + ".dw.weight", Shape{e, 1, k, k}, InitRule::kLecunNormal, k * k),
        add_param(name + ".proj.weight", Shape{spec.out, e, 1, 1}, InitRule::kLecunNormal, e),
    };
    return push(std::move(n));
  }

  std::size_t add_concat(const std::string& name, std::size_t a, std::size_t b) {
    const Shape sa = checked_input(name, a);
    const Shape sb = checked_input(name, b);
    if (sa.h != sb.h || sa.w != sb.w) {
      throw ValidationError(name, "cannot concatenate " + sa.str() + " with " + sb.str());
    }
    Node n = make(name, NodeKind::kConcat, {a, b});
    n.out = Shape{1, sa.c + sb.c, sa.h, sa.w};
    return push(std::move(n));
  }

  std::size_t add_upsample(const std::string& name, std::size_t input) {
    const Shape in = checked_input(name, input);
    Node n = make(name, NodeKind::kUpsample, {input});
    n.out = Shape{1, in.c, in.h * 2, in.w * 2};
    return push(std::move(n));
  }

 private:
  Shape checked_input(const std::string& name, std::size_t id) const {
    if (id != kInput && id >= nodes_.size()) throw ValidationError(name, "input refers to a later or missing node");
    return shape_of(id);
  }

  Node make(const std::string& name, NodeKind kind, std::vector<std::size_t> inputs) const {
    Node n;
    n.id = nodes_.size();
    n.name = name;
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
  }

  std::size_t push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::size_t add_param(std::string name, Shape shape, InitRule init, std::size_t fan_in, bool learnable = true) {
    params_.push_back(ParamEntry{std::move(name), shape, init, fan_in, learnable});
    return params_.size() - 1;
  }

  Shape input_;
  std::vector<Node> nodes_;
  std::vector<ParamEntry> params_;
};

/// Checks the config-level invariants that do not depend on wiring.
inline void validate_config(const NetworkConfig& cfg) {
  if (cfg.in_channels == 0) throw ValidationError("input", "in_channels must be >= 1");
  if (cfg.blocks.empty()) throw ValidationError("blocks", "at least one dense block is required");
  const std::size_t f = cfg.downsample_factor();
  if (cfg.height == 0 || cfg.width == 0 || cfg.height % f != 0 || cfg.width % f != 0) {
    throw ValidationError("input", "input " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                                       " must be divisible by " + std::to_string(f));
  }
  if (cfg.stem.channels == 0) throw ValidationError("stem", "stem channels must be >= 1");
  if (cfg.transitions.size() + 1 != cfg.blocks.size()) {
    throw ValidationError("transitions", "expected " + std::to_string(cfg.blocks.size() - 1) + " transitions");
  }
  if (cfg.decoder.size() != cfg.blocks.size()) {
    throw ValidationError("decoder", "expected " + std::to_string(cfg.blocks.size()) + " decoder blocks");
  }
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    if (cfg.blocks[b].modules.empty()) {
      throw ValidationError("block" + std::to_string(b + 1), "dense block needs at least one module");
    }
  }
  if (cfg.bottleneck == 0) throw ValidationError("bottleneck", "channels must be >= 1");
  if (!(cfg.head.output_scale != 0.0) || !std::isfinite(cfg.head.output_scale) ||
      !std::isfinite(cfg.head.output_offset)) {
    throw ValidationError("head", "output scale must be finite and nonzero");
  }
}

/// Compiles a config into a graph.
///
/// Stem: conv kxk stride 2 (+bias, SELU) then 2x2 pool. Within block b,
/// module k reads the concatenation of the block input and the growth
/// outputs of modules 1..k-1. Transition: linear 1x1 conv then 2x2 pool.
/// Bottleneck: linear 1x1 conv. Decoder block: upsample 2x, concat with the
/// skip tensor, stage A, stage B. Head: conv to 1 channel, upsample 2x.
inline NetworkGraph build_network(const NetworkConfig& cfg) {
  validate_config(cfg);
  NetworkGraph g(Shape{1, cfg.in_channels, cfg.height, cfg.width});
  std::vector<std::size_t> encoder_taps;  // stem conv, then transition convs (pre-pool)

  const std::size_t stem = g.add_conv("stem.conv", NetworkGraph::kInput,
                                      ConvNodeSpec{cfg.stem.kernel, 2, cfg.stem.kernel / 2, cfg.stem.channels, true, true});
  encoder_taps.push_back(stem);
  std::size_t cur = g.add_pool("stem.pool", stem, cfg.stem.pool);

  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b + 1);
    const auto& mods = cfg.blocks[b].modules;
    for (std::size_t k = 0; k < mods.size(); ++k) {
      const std::string mname = prefix + ".pbep" + std::to_string(k + 1);
      const std::size_t m = g.add_pbep(mname, cur, mods[k]);
      cur = g.add_concat(prefix + ".concat" + std::to_string(k + 1), cur, m);
    }
    if (b + 1 < cfg.blocks.size()) {
      const std::string tname = "trans" + std::to_string(b + 1);
      const std::size_t t = g.add_conv(tname + ".conv", cur,
                                       ConvNodeSpec{1, 1, 0, cfg.transitions[b].channels, false, false});
      encoder_taps.push_back(t);
      cur = g.add_pool(tname + ".pool", t, cfg.transitions[b].pool);
    }
  }
  cur = g.add_conv("bottleneck", cur, ConvNodeSpec{1, 1, 0, cfg.bottleneck, false, false});

  for (std::size_t i = 0; i < cfg.decoder.size(); ++i) {
    const auto& d = cfg.decoder[i];
    const std::string prefix = "dec" + std::to_string(i + 1);
    cur = g.add_upsample(prefix + ".up", cur);
    if (d.skip.index >= encoder_taps.size()) {
      throw ValidationError(prefix + ".concat", "skip source " + std::to_string(d.skip.index) + " does not exist");
    }
    const std::size_t skip = encoder_taps[d.skip.index];
    const Shape& ss = g.shape_of(skip);
    const Shape& cs = g.shape_of(cur);
    if (ss.h != cs.h || ss.w != cs.w) {
      throw ValidationError(prefix + ".concat", "skip tensor " + ss.str() + " does not match decoder resolution " +
                                                    std::to_string(cs.h) + "x" + std::to_string(cs.w));
    }
    cur = g.add_concat(prefix + ".concat", cur, skip);
    for (const auto* st : {&d.a, &d.b}) {
      const std::string sname = prefix + (st == &d.a ? ".A" : ".B");
      if (st->kind == StageKind::kConv) {
        cur = g.add_conv(sname, cur, ConvNodeSpec{st->kernel, 1, st->kernel / 2, st->out, false, true});
      } else {
        cur = g.add_ep(sname, cur, EpSpec{st->expand_out, st->kernel, st->out});
      }
    }
  }
  const std::size_t head = g.add_conv("head.conv", cur, ConvNodeSpec{cfg.head.kernel, 1, cfg.head.kernel / 2, 1, true, false});
  const std::size_t out = g.add_upsample("head.up", head);
  const Shape& os = g.shape_of(out);
  if (os.h != cfg.height || os.w != cfg.width) {
    throw ValidationError("head.up", "output " + os.str() + " does not match input resolution");
  }
  g.output_offset = cfg.head.output_offset;
  g.output_scale = cfg.head.output_scale;
  return g;
}

// ---------------------------------------------------------------------------
// cost model

/// Learnable parameters of one node: conv k^2*Cin*Cout (+Cout bias),
/// depthwise k^2*C, batchnorm 2*C.
inline std::uint64_t node_params(const NetworkGraph& g, const Node& n) {
  std::uint64_t total = 0;
  for (std::size_t p : n.params) {
    if (g.params()[p].learnable) total += g.params()[p].shape.size();
  }
  return total;
}

/// Multiply-accumulates of one node: conv k^2*Cin*Cout*Hout*Wout, depthwise
/// k^2*C*Hout*Wout. Batchnorm, SELU, pooling, upsampling and concat are free.
inline std::uint64_t node_macs(const NetworkGraph& g, const Node& n) {
  const Shape in = n.inputs.empty() ? Shape{} : g.shape_of(n.inputs[0]);
  const std::uint64_t hw = static_cast<std::uint64_t>(n.out.h) * n.out.w;
  switch (n.kind) {
    case NodeKind::kConv:
      return static_cast<std::uint64_t>(n.conv.kernel) * n.conv.kernel * in.c * n.conv.out * hw;
    case NodeKind::kPbep: {
      const auto& s = n.pbep;
      const std::uint64_t k2 = static_cast<std::uint64_t>(s.dw_kernel) * s.dw_kernel;
      return (in.c * s.proj1_out + s.proj1_out * s.expand_out + k2 * s.expand_out + s.expand_out * s.growth_out) * hw;
    }
    case NodeKind::kEp: {
      const auto& s = n.ep;
      const std::uint64_t k2 = static_cast<std::uint64_t>(s.dw_kernel) * s.dw_kernel;
      return (in.c * s.expand_out + k2 * s.expand_out + s.expand_out * s.out) * hw;
    }
    default:
      return 0;
  }
}

inline std::uint64_t count_params(const NetworkGraph& g) {
  std::uint64_t total = 0;
  for (const auto& n : g.nodes()) total += node_params(g, n);
  return total;
}

inline std::uint64_t count_macs(const NetworkGraph& g) {
  std::uint64_t total = 0;
  for (const auto& n : g.nodes()) total += node_macs(g, n);
  return total;
}

}  // namespace nanodepth::arch
