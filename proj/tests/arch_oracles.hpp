#pragma once

// Reference data and independent cost formulas for architecture tests.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/arch/graph.hpp"
#include "nanodepth/engine/rng.hpp"

namespace nanodepth::testing {

struct LayerRow {
  std::string node;
  std::size_t h, w, c;
};

/// Published per-layer output sizes (h x w x c), listed rows only.
inline std::vector<LayerRow> published_rows(arch::Variant v) {
  if (v == arch::Variant::kNyu) {
    return {{"stem.conv", 240, 320, 15},        {"block1.pbep1", 120, 160, 16}, {"block1.pbep2", 120, 160, 16},
            {"block1.pbep3", 120, 160, 18},     {"block1.pbep4", 120, 160, 20}, {"block1.pbep6", 120, 160, 20},
            {"trans1.pool", 60, 80, 57},        {"block2.pbep1", 60, 80, 11},   {"block2.pbep2", 60, 80, 15},
            {"block2.pbep3", 60, 80, 19},       {"block2.pbep4", 60, 80, 19},   {"block2.pbep12", 60, 80, 22},
            {"trans2.pool", 30, 40, 133},       {"block3.pbep1", 30, 40, 17},   {"block3.pbep2", 30, 40, 16},
            {"block3.pbep3", 30, 40, 16},       {"block3.pbep4", 30, 40, 17},   {"block3.pbep32", 30, 40, 20},
            {"trans3.pool", 15, 20, 336},       {"block4.pbep1", 15, 20, 19},   {"block4.pbep2", 15, 20, 15},
            {"block4.pbep3", 15, 20, 19},       {"block4.pbep4", 15, 20, 18},   {"block4.pbep32", 15, 20, 15},
            {"bottleneck", 15, 20, 302},        {"dec1.A", 30, 40, 138},        {"dec1.B", 30, 40, 118},
            {"dec2.A", 60, 80, 54},             {"dec2.B", 60, 80, 40},         {"dec3.A", 120, 160, 23},
            {"dec3.B", 120, 160, 16},           {"dec4.A", 240, 320, 11},       {"dec4.B", 240, 320, 12},
            {"head.conv", 240, 320, 1},         {"head.up", 480, 640, 1}};
  }
  return {{"stem.conv", 192, 640, 14},       {"block1.pbep1", 96, 320, 13}, {"block1.pbep2", 96, 320, 15},
          {"block1.pbep3", 96, 320, 18},     {"block1.pbep4", 96, 320, 13}, {"block1.pbep6", 96, 320, 17},
          {"trans1.pool", 48, 160, 30},      {"block2.pbep1", 48, 160, 9},  {"block2.pbep2", 48, 160, 13},
          {"block2.pbep3", 48, 160, 13},     {"block2.pbep4", 48, 160, 18}, {"block2.pbep12", 48, 160, 19},
          {"trans2.pool", 24, 80, 79},       {"block3.pbep1", 24, 80, 13},  {"block3.pbep2", 24, 80, 14},
          {"block3.pbep3", 24, 80, 18},      {"block3.pbep4", 24, 80, 15},  {"block3.pbep32", 24, 80, 14},
          {"trans3.pool", 12, 40, 117},      {"block4.pbep1", 12, 40, 17},  {"block4.pbep2", 12, 40, 13},
          {"block4.pbep3", 12, 40, 14},      {"block4.pbep4", 12, 40, 12},  {"block4.pbep32", 12, 40, 11},
          {"bottleneck", 12, 40, 176},       {"dec1.A", 24, 80, 86},        {"dec1.B", 24, 80, 112},
          {"dec2.A", 48, 160, 47},           {"dec2.B", 48, 160, 48},       {"dec3.A", 96, 320, 28},
          {"dec3.B", 96, 320, 25},           {"dec4.A", 192, 640, 17},      {"dec4.B", 192, 640, 24},
          {"head.conv", 192, 640, 1},        {"head.up", 384, 1280, 1}};
}

/// Published totals: parameters and MACs.
struct PublishedTotals {
  double params;
  double macs;
};

inline PublishedTotals published_totals(arch::Variant v) {
  return v == arch::Variant::kNyu ? PublishedTotals{3.46e6, 4.4e9} : PublishedTotals{1.75e6, 4.66e9};
}

struct Cost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

/// Totals straight from the config, without building a graph.
inline Cost closed_form_cost(const arch::NetworkConfig& cfg) {
  using u64 = std::uint64_t;
  Cost c;
  u64 h = cfg.height / 2, w = cfg.width / 2;
  const u64 k = cfg.stem.kernel, s = cfg.stem.channels;
  c.params += k * k * cfg.in_channels * s + s;
  c.macs += k * k * cfg.in_channels * s * h * w;
  std::vector<u64> tap_channels{s};
  h /= 2;
  w /= 2;
  u64 ch = s;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    for (const auto& m : cfg.blocks[b].modules) {
      const u64 p = m.proj1_out, e = m.expand_out, g = m.growth_out, kk = m.dw_kernel * m.dw_kernel;
      c.params += ch * p + 2 * p + p * e + kk * e + e * g;
      c.macs += (ch * p + p * e + kk * e + e * g) * h * w;
      ch += g;
    }
    if (b + 1 < cfg.blocks.size()) {
      const u64 t = cfg.transitions[b].channels;
      c.params += ch * t;
      c.macs += ch * t * h * w;
      tap_channels.push_back(t);
      ch = t;
      h /= 2;
      w /= 2;
    }
  }
  c.params += ch * cfg.bottleneck;
  c.macs += ch * cfg.bottleneck * h * w;
  ch = cfg.bottleneck;
  for (const auto& d : cfg.decoder) {
    h *= 2;
    w *= 2;
    ch += tap_channels.at(d.skip.index);
    for (const auto* st : {&d.a, &d.b}) {
      const u64 kk = st->kernel * st->kernel;
      if (st->kind == arch::StageKind::kConv) {
        c.params += kk * ch * st->out;
        c.macs += kk * ch * st->out * h * w;
      } else {
        const u64 e = st->expand_out;
        c.params += ch * e + kk * e + e * st->out;
        c.macs += (ch * e + kk * e + e * st->out) * h * w;
      }
      ch = st->out;
    }
  }
  const u64 hk = cfg.head.kernel * cfg.head.kernel;
  c.params += hk * ch + 1;
  c.macs += hk * ch * h * w;
  return c;
}

/// Random valid config with 1-3 blocks of 1-3 modules, mixed decoder stages.
inline arch::NetworkConfig random_config(Rng& rng, std::size_t max_blocks = 3) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
  };
  arch::NetworkConfig cfg;
  cfg.name = "random";
  const std::size_t nb = pick(1, max_blocks);
  const std::size_t f = std::size_t{1} << (nb + 1);
  cfg.height = f * pick(1, 3);
  cfg.width = f * pick(1, 3);
  cfg.stem = arch::StemSpec{2 * pick(0, 3) + 1, pick(1, 8), rng.bernoulli(0.5) ? PoolKind::kMax : PoolKind::kAvg};
  std::size_t ch = cfg.stem.channels;
  for (std::size_t b = 0; b < nb; ++b) {
    arch::BlockSpec blk;
    const std::size_t mods = pick(1, 3);
    for (std::size_t m = 0; m < mods; ++m) {
      arch::PbepSpec p;
      p.proj1_out = pick(1, ch);
      p.expand_out = p.proj1_out * pick(1, 4);
      p.dw_kernel = 2 * pick(0, 2) + 1;
      p.growth_out = pick(1, 6);
      blk.modules.push_back(p);
      ch += p.growth_out;
    }
    cfg.blocks.push_back(blk);
    if (b + 1 < nb) {
      cfg.transitions.push_back(arch::TransitionSpec{pick(1, 10), rng.bernoulli(0.5) ? PoolKind::kMax : PoolKind::kAvg});
      ch = cfg.transitions.back().channels;
    }
  }
  cfg.bottleneck = pick(1, 10);
  for (std::size_t i = 0; i < nb; ++i) {
    arch::DecoderBlockSpec d;
    d.skip = arch::default_skip(nb, i);
    auto stage = [&]() {
      const std::size_t out = pick(1, 8), kern = 2 * pick(0, 2) + 1;
      return rng.bernoulli(0.5) ? arch::conv_stage(out, kern) : arch::ep_stage(0, out, kern);
    };
    d.a = stage();
    d.b = stage();
    cfg.decoder.push_back(d);
  }
  cfg.head.kernel = 2 * pick(0, 2) + 1;
  arch::refresh_decoder_expansions(cfg);
  return cfg;
}

}  // namespace nanodepth::testing
