#pragma once

// Declarative description of a densely connected encoder-decoder depth
// network: stem, dense blocks of PBEP modules, transitions, bottleneck,
// upsampling decoder blocks with encoder skips, and a depth head.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "nanodepth/engine/ops.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::arch {

/// Projection -> batchnorm -> expansion -> depthwise -> projection.
struct PbepSpec {
  std::size_t proj1_out = 1;
  std::size_t expand_out = 1;
  std::size_t dw_kernel = 3;
  std::size_t growth_out = 1;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.99;

  friend bool operator==(const PbepSpec&, const PbepSpec&) = default;
};

/// Expansion -> depthwise -> projection.
struct EpSpec {
  std::size_t expand_out = 1;
  std::size_t dw_kernel = 3;
  std::size_t out = 1;

  friend bool operator==(const EpSpec&, const EpSpec&) = default;
};

enum class StageKind { kConv, kEp };

/// One decoder stage: a plain kxk conv + SELU, or an EP module.
struct StageSpec {
  StageKind kind = StageKind::kEp;
  std::size_t out = 1;
  std::size_t kernel = 3;      // conv kernel, or depthwise kernel for EP
  std::size_t expand_out = 0;  // EP only

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct StemSpec {
  std::size_t kernel = 7;
  std::size_t channels = 16;
  PoolKind pool = PoolKind::kMax;

  friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

struct BlockSpec {
  std::vector<PbepSpec> modules;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct TransitionSpec {
  std::size_t channels = 1;
  PoolKind pool = PoolKind::kAvg;

  friend bool operator==(const TransitionSpec&, const TransitionSpec&) = default;
};

/// Encoder tensor concatenated into a decoder block: the stem conv output
/// (index 0) or the pre-pool output of transition `index` (1-based).
struct SkipSource {
  std::size_t index = 0;

  bool is_stem() const noexcept { return index == 0; }
  friend bool operator==(const SkipSource&, const SkipSource&) = default;
};

struct DecoderBlockSpec {
  StageSpec a;
  StageSpec b;
  SkipSource skip;

  friend bool operator==(const DecoderBlockSpec&, const DecoderBlockSpec&) = default;
};

/// kxk conv to one channel, then bilinear 2x to input resolution. The output
/// is mapped through offset + scale * y; both are fixed, not learned.
struct HeadSpec {
  std::size_t kernel = 3;
  double output_offset = 0.0;
  double output_scale = 1.0;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct NetworkConfig {
  std::string name = "custom";
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t in_channels = 3;
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  std::vector<TransitionSpec> transitions;  // blocks.size() - 1 entries
  std::size_t bottleneck = 1;
  std::vector<DecoderBlockSpec> decoder;  // blocks.size() entries, deepest first
  HeadSpec head;

  /// Spatial reduction of the bottleneck relative to the input.
  std::size_t downsample_factor() const { return std::size_t{1} << (blocks.size() + 1); }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Skip source for decoder block `i` (0-based, deepest first) of an encoder
/// with `num_blocks` blocks: the encoder tensor at the same resolution.
inline SkipSource default_skip(std::size_t num_blocks, std::size_t i) { return SkipSource{num_blocks - 1 - i}; }

/// PBEP widths from the module's incoming channel count:
/// proj1 = ceil(in / proj_divisor) capped at `in`, expand = expand_mult * proj1.
inline PbepSpec fill_pbep(std::size_t incoming, std::size_t growth, std::size_t proj_divisor = 12,
                          std::size_t expand_mult = 6) {
  PbepSpec s;
  s.proj1_out = std::min(incoming, (incoming + proj_divisor - 1) / proj_divisor);
  s.expand_out = expand_mult * s.proj1_out;
  s.growth_out = growth;
  return s;
}

/// Growth values for modules 1..count from the listed (1-based) rows, with
/// unlisted rows linearly interpolated between their nearest listed
/// neighbours and rounded half-up. The first and last rows must be listed.
inline std::vector<std::size_t> interpolate_growth(const std::map<std::size_t, std::size_t>& listed,
                                                   std::size_t count) {
  if (listed.empty() || !listed.contains(1) || !listed.contains(count)) {
    throw ValidationError("", "growth interpolation needs the first and last rows listed");
  }
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t k = 1; k <= count; ++k) {
    if (auto it = listed.find(k); it != listed.end()) {
      out.push_back(it->second);
      continue;
    }
    auto hi = listed.upper_bound(k);
    auto lo = std::prev(hi);
    const double t = static_cast<double>(k - lo->first) / static_cast<double>(hi->first - lo->first);
    const double v = static_cast<double>(lo->second) + t * (static_cast<double>(hi->second) - static_cast<double>(lo->second));
    out.push_back(static_cast<std::size_t>(std::floor(v + 0.5)));
  }
  return out;
}

/// Dense block whose modules follow fill_pbep for their incoming widths.
inline BlockSpec make_dense_block(std::size_t block_input, const std::vector<std::size_t>& growth,
                                  std::size_t proj_divisor = 12, std::size_t expand_mult = 6) {
  BlockSpec b;
  std::size_t incoming = block_input;
  for (std::size_t g : growth) {
    b.modules.push_back(fill_pbep(incoming, g, proj_divisor, expand_mult));
    incoming += g;
  }
  return b;
}

/// Decoder stage as an EP module whose expansion equals its input width.
inline StageSpec ep_stage(std::size_t incoming, std::size_t out, std::size_t kernel = 3) {
  return StageSpec{StageKind::kEp, out, kernel, incoming};
}

inline StageSpec conv_stage(std::size_t out, std::size_t kernel = 3) {
  return StageSpec{StageKind::kConv, out, kernel, 0};
}

/// Channel count leaving a dense block.
inline std::size_t block_output_channels(std::size_t block_input, const BlockSpec& b) {
  std::size_t c = block_input;
  for (const auto& m : b.modules) c += m.growth_out;
  return c;
}

/// Width of the encoder tensor a skip source refers to.
inline std::size_t skip_channels(const NetworkConfig& cfg, SkipSource s) {
  if (s.is_stem()) return cfg.stem.channels;
  if (s.index > cfg.transitions.size()) {
    throw ValidationError("skip", "transition " + std::to_string(s.index) + " does not exist");
  }
  return cfg.transitions[s.index - 1].channels;
}

/// Rewires every EP decoder stage so its expansion equals its incoming width
/// (after channel counts elsewhere change).
inline void refresh_decoder_expansions(NetworkConfig& cfg) {
  std::size_t c = cfg.bottleneck;
  for (auto& d : cfg.decoder) {
    std::size_t in = c + skip_channels(cfg, d.skip);
    if (d.a.kind == StageKind::kEp) d.a.expand_out = in;
    in = d.a.out;
    if (d.b.kind == StageKind::kEp) d.b.expand_out = in;
    c = d.b.out;
  }
}

enum class Variant { kNyu, kKitti };

namespace detail {

struct TableColumn {
  std::size_t height, width, stem;
  std::vector<std::map<std::size_t, std::size_t>> growth;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> transitions;
  std::size_t bottleneck;
  std::vector<std::pair<std::size_t, std::size_t>> upconv;
};

inline const TableColumn& table_column(Variant v) {
  static const TableColumn nyu{
      480, 640, 15,
      {{{1, 16}, {2, 16}, {3, 18}, {4, 20}, {6, 20}},
       {{1, 11}, {2, 15}, {3, 19}, {4, 19}, {12, 22}},
       {{1, 17}, {2, 16}, {3, 16}, {4, 17}, {32, 20}},
       {{1, 19}, {2, 15}, {3, 19}, {4, 18}, {32, 15}}},
      {6, 12, 32, 32},
      {57, 133, 336},
      302,
      {{138, 118}, {54, 40}, {23, 16}, {11, 12}}};
  static const TableColumn kitti{
      384, 1280, 14,
      {{{1, 13}, {2, 15}, {3, 18}, {4, 13}, {6, 17}},
       {{1, 9}, {2, 13}, {3, 13}, {4, 18}, {12, 19}},
       {{1, 13}, {2, 14}, {3, 18}, {4, 15}, {32, 14}},
       {{1, 17}, {2, 13}, {3, 14}, {4, 12}, {32, 11}}},
      {6, 12, 32, 32},
      {30, 79, 117},
      176,
      {{86, 112}, {47, 48}, {28, 25}, {17, 24}}};
  return v == Variant::kNyu ? nyu : kitti;
}

}  // namespace detail

/// The published microarchitecture for NYU Depth v2 or KITTI. Listed PBEP
/// growth values are used verbatim; elided rows are interpolated. Interior
/// PBEP widths and decoder EP expansions are not published and follow
/// fill_pbep / ep_stage.
inline NetworkConfig default_config(Variant v) {
  const auto& col = detail::table_column(v);
  NetworkConfig cfg;
  cfg.name = v == Variant::kNyu ? "nyu-default" : "kitti-default";
  cfg.height = col.height;
  cfg.width = col.width;
  cfg.stem = StemSpec{7, col.stem, PoolKind::kMax};
  std::size_t c = col.stem;
  for (std::size_t b = 0; b < col.counts.size(); ++b) {
    cfg.blocks.push_back(make_dense_block(c, interpolate_growth(col.growth[b], col.counts[b])));
    c = block_output_channels(c, cfg.blocks.back());
    if (b + 1 < col.counts.size()) {
      cfg.transitions.push_back(TransitionSpec{col.transitions[b], PoolKind::kAvg});
      c = col.transitions[b];
    }
  }
  cfg.bottleneck = col.bottleneck;
  for (std::size_t i = 0; i < col.upconv.size(); ++i) {
    DecoderBlockSpec d;
    d.skip = default_skip(col.counts.size(), i);
    d.a = ep_stage(0, col.upconv[i].first);
    d.b = ep_stage(0, col.upconv[i].second);
    cfg.decoder.push_back(d);
  }
  refresh_decoder_expansions(cfg);
  return cfg;
}

/// Smallest member of the family: one block with one PBEP module and one decoder block.
inline NetworkConfig minimal_config(std::size_t height = 64, std::size_t width = 64) {
  NetworkConfig cfg;
  cfg.name = "minimal";
  cfg.height = height;
  cfg.width = width;
  cfg.stem = StemSpec{7, 8, PoolKind::kMax};
  cfg.blocks.push_back(make_dense_block(8, {8}, 4, 4));
  cfg.bottleneck = 12;
  DecoderBlockSpec d;
  d.skip = SkipSource{0};
  d.a = ep_stage(0, 8);
  d.b = ep_stage(0, 8);
  cfg.decoder.push_back(d);
  refresh_decoder_expansions(cfg);
  return cfg;
}

inline Variant parse_variant(const std::string& s) {
  if (s == "nyu" || s == "nyu-default") return Variant::kNyu;
  if (s == "kitti" || s == "kitti-default") return Variant::kKitti;
  throw ValidationError("", "unknown variant '" + s + "' (expected nyu or kitti)");
}

}  // namespace nanodepth::arch
