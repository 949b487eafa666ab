#pragma once

// Constrained evolutionary search over a discrete family of network
// configurations, scored by NetScore and filtered by an indicator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/arch/graph.hpp"
#include "nanodepth/engine/rng.hpp"
#include "nanodepth/errors.hpp"
#include "nanodepth/netscore/netscore.hpp"
#include "nanodepth/trainer/train.hpp"

namespace nanodepth::explorer {

/// Values lo, lo + step, ... up to hi.
struct IntRange {
  std::size_t lo = 1;
  std::size_t hi = 1;
  std::size_t step = 1;

  std::size_t size() const { return hi < lo || step == 0 ? 0 : (hi - lo) / step + 1; }
  std::size_t value(std::size_t i) const { return lo + i * step; }

  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct DecoderWidths {
  std::size_t a = 16;
  std::size_t b = 16;

  friend bool operator==(const DecoderWidths&, const DecoderWidths&) = default;
};

/// Per block: module count, growth and expansion multiplier; per
/// transition: output channels; one decoder stage kind shared by all stages.
struct SearchSpace {
  std::size_t height = 48;
  std::size_t width = 64;
  std::size_t blocks = 2;
  IntRange modules{1, 3, 1};
  IntRange growth{4, 12, 4};
  IntRange expand_mult{2, 6, 2};
  IntRange transition{16, 32, 8};
  std::vector<arch::StageKind> stage_kinds{arch::StageKind::kEp};
  std::size_t stem_channels = 16;
  std::size_t proj_divisor = 4;
  std::size_t bottleneck = 32;
  std::vector<DecoderWidths> decoder;  // deepest first; one per block
  double head_offset = 0.0;
  double head_scale = 1.0;

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

struct IndicatorConstraints {
  double delta1_min = 0.89;
  std::uint64_t params_max = 2000000;
  std::optional<std::uint64_t> macs_max;

  friend bool operator==(const IndicatorConstraints&, const IndicatorConstraints&) = default;
};

inline void validate_space(const SearchSpace& s) {
  if (s.blocks == 0) throw ValidationError("space", "at least one block is required");
  if (s.modules.size() == 0 || s.growth.size() == 0 || s.expand_mult.size() == 0 || s.transition.size() == 0) {
    throw ValidationError("space", "every range must be non-empty");
  }
  if (s.modules.lo == 0 || s.growth.lo == 0 || s.expand_mult.lo == 0 || s.transition.lo == 0) {
    throw ValidationError("space", "ranges must start at 1 or more");
  }
  if (s.stage_kinds.empty()) throw ValidationError("space", "at least one decoder stage kind is required");
  if (s.decoder.size() != s.blocks) {
    throw ValidationError("space", "expected " + std::to_string(s.blocks) + " decoder width entries");
  }
  const std::size_t f = std::size_t{1} << (s.blocks + 1);
  if (s.height % f != 0 || s.width % f != 0 || s.height == 0 || s.width == 0) {
    throw ValidationError("space", "resolution must be divisible by " + std::to_string(f));
  }
}

/// Radix of every gene, in genotype order.
inline std::vector<std::size_t> gene_radices(const SearchSpace& s) {
  std::vector<std::size_t> r;
  for (std::size_t b = 0; b < s.blocks; ++b) {
    r.push_back(s.modules.size());
    r.push_back(s.growth.size());
    r.push_back(s.expand_mult.size());
  }
  for (std::size_t t = 0; t + 1 < s.blocks; ++t) r.push_back(s.transition.size());
  r.push_back(s.stage_kinds.size());
  return r;
}

/// Number of points; saturates at uint64 max.
inline std::uint64_t space_size(const SearchSpace& s) {
  std::uint64_t n = 1;
  for (std::size_t r : gene_radices(s)) {
    if (n > std::numeric_limits<std::uint64_t>::max() / r) return std::numeric_limits<std::uint64_t>::max();
    n *= r;
  }
  return n;
}

using Genotype = std::vector<std::size_t>;  // value index per gene

/// Position in enumeration order; the first gene is most significant.
inline std::uint64_t genotype_index(const SearchSpace& s, const Genotype& g) {
  const auto r = gene_radices(s);
  std::uint64_t idx = 0;
  for (std::size_t i = 0; i < r.size(); ++i) idx = idx * r[i] + g.at(i);
  return idx;
}

inline Genotype genotype_at(const SearchSpace& s, std::uint64_t index) {
  const auto r = gene_radices(s);
  Genotype g(r.size());
  for (std::size_t i = r.size(); i-- > 0;) {
    g[i] = static_cast<std::size_t>(index % r[i]);
    index /= r[i];
  }
  return g;
}

inline arch::NetworkConfig to_config(const SearchSpace& s, const Genotype& g) {
  validate_space(s);
  const auto r = gene_radices(s);
  if (g.size() != r.size()) throw ValidationError("genotype", "wrong gene count");
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (g[i] >= r[i]) throw ValidationError("genotype", "gene " + std::to_string(i) + " out of range");
  }
  arch::NetworkConfig cfg;
  cfg.name = "candidate";
  cfg.height = s.height;
  cfg.width = s.width;
  cfg.stem = arch::StemSpec{7, s.stem_channels, PoolKind::kMax};
  std::size_t ch = s.stem_channels;
  for (std::size_t b = 0; b < s.blocks; ++b) {
    const std::size_t mods = s.modules.value(g[3 * b]), growth = s.growth.value(g[3 * b + 1]);
    const std::size_t mult = s.expand_mult.value(g[3 * b + 2]);
    cfg.blocks.push_back(arch::make_dense_block(ch, std::vector<std::size_t>(mods, growth), s.proj_divisor, mult));
    ch = arch::block_output_channels(ch, cfg.blocks.back());
    if (b + 1 < s.blocks) {
      cfg.transitions.push_back(arch::TransitionSpec{s.transition.value(g[3 * s.blocks + b]), PoolKind::kAvg});
      ch = cfg.transitions.back().channels;
    }
  }
  cfg.bottleneck = s.bottleneck;
  const arch::StageKind kind = s.stage_kinds[g.back()];
  for (std::size_t i = 0; i < s.blocks; ++i) {
    arch::DecoderBlockSpec d;
    d.skip = arch::default_skip(s.blocks, i);
    d.a = kind == arch::StageKind::kEp ? arch::ep_stage(0, s.decoder[i].a) : arch::conv_stage(s.decoder[i].a);
    d.b = kind == arch::StageKind::kEp ? arch::ep_stage(0, s.decoder[i].b) : arch::conv_stage(s.decoder[i].b);
    cfg.decoder.push_back(d);
  }
  cfg.head.output_offset = s.head_offset;
  cfg.head.output_scale = s.head_scale;
  arch::refresh_decoder_expansions(cfg);
  return cfg;
}

inline Genotype sample(const SearchSpace& s, Rng& rng) {
  const auto r = gene_radices(s);
  Genotype g(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) g[i] = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(r[i]) - 1));
  return g;
}

/// Each gene moves, with probability `rate`, to a different value of its
/// range drawn uniformly.
inline Genotype mutate(const SearchSpace& s, const Genotype& g, Rng& rng, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("mutate", "rate must lie in [0, 1]");
  const auto r = gene_radices(s);
  Genotype out = g;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] < 2 || !rng.bernoulli(rate)) continue;
    auto v = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(r[i]) - 2));
    if (v >= g[i]) ++v;
    out[i] = v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

enum class EvalMode { kProxy, kTrain };

struct Measurement {
  double delta1 = 0.0;
  double abs_rel = 1.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

/// Capacity proxy: with C the total growth of all encoder modules,
/// delta1 = 1 - exp(-C / tau) and abs_rel = 0.5 * exp(-C / tau).
struct ProxyOptions {
  double tau = 24.0;
};

struct EvalSettings {
  EvalMode mode = EvalMode::kProxy;
  ProxyOptions proxy;
  std::size_t budget = 50;  // training steps in train mode
  trainer::SceneConfig scene;
  std::size_t batch = 2;
  std::size_t heldout = 8;
  std::uint64_t seed = 1;
};

inline double encoder_capacity(const arch::NetworkConfig& cfg) {
  double c = 0.0;
  for (const auto& b : cfg.blocks) {
    for (const auto& m : b.modules) c += static_cast<double>(m.growth_out);
  }
  return c;
}

inline Measurement evaluate_candidate(const arch::NetworkConfig& cfg, const EvalSettings& es = {}) {
  const auto g = arch::build_network(cfg);
  Measurement m;
  m.params = arch::count_params(g);
  m.macs = arch::count_macs(g);
  if (es.mode == EvalMode::kProxy) {
    const double e = std::exp(-encoder_capacity(cfg) / es.proxy.tau);
    m.delta1 = 1.0 - e;
    m.abs_rel = 0.5 * e;
  } else {
    trainer::TrainOptions o;
    o.steps = es.budget;
    o.batch = es.batch;
    o.heldout = es.heldout;
    o.eval_every = es.budget == 0 ? 1 : es.budget;
    o.init_seed = es.seed;
    o.scene = es.scene;
    o.scene.height = cfg.height;
    o.scene.width = cfg.width;
    const auto res = trainer::train<float>(g, o);
    m.delta1 = res.history.back().report.delta1;
    m.abs_rel = res.history.back().report.abs_rel;
  }
  return m;
}

inline bool indicator(double delta1, std::uint64_t params, std::uint64_t macs, const IndicatorConstraints& c) {
  return delta1 >= c.delta1_min && params <= c.params_max && (!c.macs_max || macs <= *c.macs_max);
}

struct Candidate {
  Genotype genotype;
  std::uint64_t index = 0;
  arch::NetworkConfig config;
  Measurement measured;
  double score = -std::numeric_limits<double>::infinity();
  bool feasible = false;
};

/// NetScore of a measurement, with p in millions and m in billions; a
/// useless predictor (zero composite accuracy) scores -infinity.
inline double score_of(const Measurement& m, const netscore::NetScoreInputs& weights = {}) {
  if (!(m.abs_rel < 1.0) || !(m.delta1 > 0.0)) return -std::numeric_limits<double>::infinity();
  netscore::NetScoreInputs in = weights;
  in.a = netscore::composite_accuracy(m.delta1, m.abs_rel);
  in.p = static_cast<double>(m.params) / 1e6;
  in.m = static_cast<double>(m.macs) / 1e9;
  return netscore::netscore(in);
}

/// Total order used for selection and for the final answer: feasible first,
/// then higher score, fewer parameters, fewer MACs, lower enumeration index.
inline bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (a.score != b.score) return a.score > b.score;
  if (a.measured.params != b.measured.params) return a.measured.params < b.measured.params;
  if (a.measured.macs != b.measured.macs) return a.measured.macs < b.measured.macs;
  return a.index < b.index;
}

class Evaluator {
 public:
  Evaluator(const SearchSpace& space, const IndicatorConstraints& constraints, EvalSettings settings)
      : space_(space), constraints_(constraints), settings_(std::move(settings)) {}

  /// Memoized by enumeration index.
  const Candidate& operator()(const Genotype& g) {
    const std::uint64_t idx = genotype_index(space_, g);
    if (auto it = memo_.find(idx); it != memo_.end()) return it->second;
    Candidate c;
    c.genotype = g;
    c.index = idx;
    c.config = to_config(space_, g);
    c.measured = evaluate_candidate(c.config, settings_);
    c.score = score_of(c.measured);
    c.feasible = indicator(c.measured.delta1, c.measured.params, c.measured.macs, constraints_);
    return memo_.emplace(idx, std::move(c)).first->second;
  }

  bool seen(const Genotype& g) const { return memo_.contains(genotype_index(space_, g)); }
  std::size_t evaluations() const { return memo_.size(); }

  /// Every evaluated candidate in rank order.
  std::vector<Candidate> ranked() const {
    std::vector<Candidate> v;
    for (const auto& [k, c] : memo_) v.push_back(c);
    std::sort(v.begin(), v.end(), ranks_before);
    return v;
  }

 private:
  SearchSpace space_;
  IndicatorConstraints constraints_;
  EvalSettings settings_;
  std::map<std::uint64_t, Candidate> memo_;
};

struct SearchResult {
  std::optional<Candidate> best;  // empty when nothing feasible was found
  std::vector<Candidate> ranked;  // every evaluated candidate
  std::size_t evaluations = 0;

  bool infeasible() const { return !best.has_value(); }
};

struct ExplorerConfig {
  std::size_t population = 6;  // mu
  std::size_t offspring = 6;   // lambda
  std::size_t generations = 8;
  double mutation_rate = 0.3;
  std::uint64_t seed = 1;
  std::size_t novelty_retries = 8;  // re-draws when a child was already evaluated
};

inline SearchResult finish(const Evaluator& ev) {
  SearchResult r;
  r.ranked = ev.ranked();
  r.evaluations = ev.evaluations();
  if (!r.ranked.empty() && r.ranked.front().feasible) r.best = r.ranked.front();
  return r;
}

/// (mu + lambda) evolution: parents chosen uniformly, children by mutation,
/// truncation selection under ranks_before.
inline SearchResult search(const SearchSpace& space, const IndicatorConstraints& constraints, const ExplorerConfig& xc,
                           const EvalSettings& settings = {}) {
  validate_space(space);
  if (xc.population == 0) throw ValidationError("search", "population must be positive");
  if (!(xc.mutation_rate > 0.0 && xc.mutation_rate <= 1.0)) {
    throw ValidationError("search", "mutation rate must lie in (0, 1]");
  }
  Rng rng(xc.seed);
  Evaluator ev(space, constraints, settings);

  std::vector<Candidate> pop;
  auto add_unique = [](std::vector<Candidate>& v, const Candidate& c) {
    if (std::none_of(v.begin(), v.end(), [&](const Candidate& o) { return o.index == c.index; })) v.push_back(c);
  };
  for (std::size_t i = 0; i < xc.population; ++i) add_unique(pop, ev(sample(space, rng)));
  std::sort(pop.begin(), pop.end(), ranks_before);

  for (std::size_t gen = 0; gen < xc.generations; ++gen) {
    std::vector<Candidate> next = pop;
    for (std::size_t k = 0; k < xc.offspring; ++k) {
      const auto& parent = pop[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pop.size()) - 1))];
      Genotype child = mutate(space, parent.genotype, rng, xc.mutation_rate);
      for (std::size_t t = 0; t < xc.novelty_retries && ev.seen(child); ++t) {
        child = mutate(space, parent.genotype, rng, xc.mutation_rate);
      }
      add_unique(next, ev(child));
    }
    std::sort(next.begin(), next.end(), ranks_before);
    if (next.size() > xc.population) next.resize(xc.population);
    pop = std::move(next);
  }
  return finish(ev);
}

inline constexpr std::uint64_t kOracleLimit = 10000;

/// Exhaustive enumeration with the same scoring and order as search().
inline SearchResult brute_force_oracle(const SearchSpace& space, const IndicatorConstraints& constraints,
                                       const EvalSettings& settings = {}) {
  validate_space(space);
  const std::uint64_t n = space_size(space);
  if (n > kOracleLimit) {
    throw ValidationError("space", "has " + std::to_string(n) + " points; exhaustive search is limited to " +
                                       std::to_string(kOracleLimit));
  }
  Evaluator ev(space, constraints, settings);
  for (std::uint64_t i = 0; i < n; ++i) ev(genotype_at(space, i));
  return finish(ev);
}

/// Space with decoder widths derived from the encoder's widest setting.
inline SearchSpace default_space(std::size_t height = 48, std::size_t width = 64, std::size_t blocks = 2) {
  SearchSpace s;
  s.height = height;
  s.width = width;
  s.blocks = blocks;
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::size_t w = std::max<std::size_t>(8, 32 >> i);
    s.decoder.push_back(DecoderWidths{w, w});
  }
  return s;
}

}  // namespace nanodepth::explorer
