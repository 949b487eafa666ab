#pragma once

// Text configs ("nanodepth-config v1") and binary weight checkpoints ("NDNW").
//
// Checkpoint layout, little-endian:
//   "NDNW" | u16 version | u32 entry count |
//   per entry: u32 name length | name bytes | 4 x u32 dims (n,c,h,w) | f32 payload

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/arch/graph.hpp"
#include "nanodepth/arch/network.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::arch {

inline constexpr std::string_view kConfigHeader = "nanodepth-config v1";
inline constexpr std::array<char, 4> kWeightsMagic = {'N', 'D', 'N', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

// ---------------------------------------------------------------------------
// number formatting / parsing shared by the text dialects

inline std::string format_real(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline double parse_real(std::string_view s, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(where + ": expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

inline std::size_t parse_count(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(where + ": expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  return {std::istream_iterator<std::string>(is), std::istream_iterator<std::string>()};
}

/// key=value tokens of a line after its leading keyword(s).
class Fields {
 public:
  Fields(const std::vector<std::string>& tokens, std::size_t first, std::string where) : where_(std::move(where)) {
    for (std::size_t i = first; i < tokens.size(); ++i) {
      const auto eq = tokens[i].find('=');
      if (eq == std::string::npos || eq == 0) throw FormatError(where_ + ": malformed field '" + tokens[i] + "'");
      if (!kv_.emplace(tokens[i].substr(0, eq), tokens[i].substr(eq + 1)).second) {
        throw FormatError(where_ + ": duplicate field '" + tokens[i].substr(0, eq) + "'");
      }
    }
  }

  bool has(const std::string& key) const { return kv_.contains(key); }

  const std::string& str(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw FormatError(where_ + ": missing field '" + key + "'");
    used_.emplace(key);
    return it->second;
  }
  std::size_t count(const std::string& key) { return parse_count(str(key), where_ + " field " + key); }
  double real(const std::string& key) { return parse_real(str(key), where_ + " field " + key); }

  void finish() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.contains(k)) throw FormatError(where_ + ": unknown field '" + k + "'");
    }
  }

 private:
  std::string where_;
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

inline const char* pool_name(PoolKind k) { return k == PoolKind::kMax ? "max" : "avg"; }

inline PoolKind parse_pool(const std::string& s, const std::string& where) {
  if (s == "max") return PoolKind::kMax;
  if (s == "avg") return PoolKind::kAvg;
  throw FormatError(where + ": pool must be max or avg, got '" + s + "'");
}

inline std::string skip_name(SkipSource s) { return s.is_stem() ? "stem" : "trans" + std::to_string(s.index); }

inline SkipSource parse_skip(const std::string& s, const std::string& where) {
  if (s == "stem") return SkipSource{0};
  if (s.rfind("trans", 0) == 0 && s.size() > 5) {
    const std::size_t idx = parse_count(std::string_view(s).substr(5), where);
    if (idx >= 1) return SkipSource{idx};
  }
  throw FormatError(where + ": skip must be stem or trans<k>, got '" + s + "'");
}

// ---------------------------------------------------------------------------
// config text

inline std::string config_to_text(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << kConfigHeader << "\n";
  os << "name " << cfg.name << "\n";
  os << "[input]\n";
  os << "size height=" << cfg.height << " width=" << cfg.width << " channels=" << cfg.in_channels << "\n";
  os << "[stem]\n";
  os << "conv kernel=" << cfg.stem.kernel << " out=" << cfg.stem.channels << " pool=" << pool_name(cfg.stem.pool)
     << "\n";
  os << "[blocks]\n";
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    os << "block " << (b + 1) << "\n";
    for (const auto& m : cfg.blocks[b].modules) {
      os << "pbep proj=" << m.proj1_out << " expand=" << m.expand_out << " kernel=" << m.dw_kernel
         << " growth=" << m.growth_out << " eps=" << format_real(m.bn_epsilon)
         << " momentum=" << format_real(m.bn_momentum) << "\n";
    }
  }
  os << "[transitions]\n";
  for (const auto& t : cfg.transitions) os << "transition out=" << t.channels << " pool=" << pool_name(t.pool) << "\n";
  os << "[bottleneck]\n";
  os << "conv out=" << cfg.bottleneck << "\n";
  os << "[decoder]\n";
  for (const auto& d : cfg.decoder) {
    os << "upconv skip=" << skip_name(d.skip);
    for (const auto& [tag, st] : {std::pair{"a", &d.a}, std::pair{"b", &d.b}}) {
      os << " " << tag << ".kind=" << (st->kind == StageKind::kEp ? "ep" : "conv") << " " << tag
         << ".out=" << st->out << " " << tag << ".kernel=" << st->kernel;
      if (st->kind == StageKind::kEp) os << " " << tag << ".expand=" << st->expand_out;
    }
    os << "\n";
  }
  os << "[head]\n";
  os << "conv kernel=" << cfg.head.kernel << " offset=" << format_real(cfg.head.output_offset)
     << " scale=" << format_real(cfg.head.output_scale) << "\n";
  return os.str();
}

inline NetworkConfig config_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return "config line " + std::to_string(lineno); };

  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line != kConfigHeader) throw FormatError(where() + ": expected header '" + std::string(kConfigHeader) + "'");
    header = true;
    break;
  }
  if (!header) throw FormatError("config: missing header '" + std::string(kConfigHeader) + "'");

  NetworkConfig cfg;
  cfg.blocks.clear();
  std::string section;
  std::map<std::string, bool> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError(where() + ": malformed section header");
      section = line.substr(1, line.size() - 2);
      static const std::vector<std::string> known = {"input", "stem", "blocks", "transitions", "bottleneck", "decoder", "head"};
      if (std::find(known.begin(), known.end(), section) == known.end()) {
        throw FormatError(where() + ": unknown section [" + section + "]");
      }
      if (seen[section]) throw FormatError(where() + ": duplicate section [" + section + "]");
      seen[section] = true;
      continue;
    }
    const auto tok = split_ws(line);
    if (section.empty()) {
      if (tok.size() == 2 && tok[0] == "name") {
        cfg.name = tok[1];
        continue;
      }
      throw FormatError(where() + ": content outside of a section");
    }
    const std::string& kw = tok[0];
    if (section == "input" && kw == "size") {
      Fields f(tok, 1, where());
      cfg.height = f.count("height");
      cfg.width = f.count("width");
      cfg.in_channels = f.count("channels");
      f.finish();
    } else if (section == "stem" && kw == "conv") {
      Fields f(tok, 1, where());
      cfg.stem.kernel = f.count("kernel");
      cfg.stem.channels = f.count("out");
      cfg.stem.pool = parse_pool(f.str("pool"), where());
      f.finish();
    } else if (section == "blocks" && kw == "block") {
      if (tok.size() != 2 || parse_count(tok[1], where()) != cfg.blocks.size() + 1) {
        throw FormatError(where() + ": blocks must be numbered consecutively from 1");
      }
      cfg.blocks.emplace_back();
    } else if (section == "blocks" && kw == "pbep") {
      if (cfg.blocks.empty()) throw FormatError(where() + ": pbep line before any block line");
      Fields f(tok, 1, where());
      PbepSpec m;
      m.proj1_out = f.count("proj");
      m.expand_out = f.count("expand");
      m.dw_kernel = f.count("kernel");
      m.growth_out = f.count("growth");
      m.bn_epsilon = f.real("eps");
      m.bn_momentum = f.real("momentum");
      f.finish();
      cfg.blocks.back().modules.push_back(m);
    } else if (section == "transitions" && kw == "transition") {
      Fields f(tok, 1, where());
      TransitionSpec t;
      t.channels = f.count("out");
      t.pool = parse_pool(f.str("pool"), where());
      f.finish();
      cfg.transitions.push_back(t);
    } else if (section == "bottleneck" && kw == "conv") {
      Fields f(tok, 1, where());
      cfg.bottleneck = f.count("out");
      f.finish();
    } else if (section == "decoder" && kw == "upconv") {
      Fields f(tok, 1, where());
      DecoderBlockSpec d;
      d.skip = parse_skip(f.str("skip"), where());
      for (const auto& [tag, st] : {std::pair{std::string("a"), &d.a}, std::pair{std::string("b"), &d.b}}) {
        const std::string kind = f.str(tag + ".kind");
        if (kind == "ep") {
          st->kind = StageKind::kEp;
          st->expand_out = f.count(tag + ".expand");
        } else if (kind == "conv") {
          st->kind = StageKind::kConv;
          st->expand_out = 0;
        } else {
          throw FormatError(where() + ": stage kind must be ep or conv, got '" + kind + "'");
        }
        st->out = f.count(tag + ".out");
        st->kernel = f.count(tag + ".kernel");
      }
      f.finish();
      cfg.decoder.push_back(d);
    } else if (section == "head" && kw == "conv") {
      Fields f(tok, 1, where());
      cfg.head.kernel = f.count("kernel");
      cfg.head.output_offset = f.real("offset");
      cfg.head.output_scale = f.real("scale");
      f.finish();
    } else {
      throw FormatError(where() + ": unexpected '" + kw + "' in section [" + section + "]");
    }
  }
  for (const char* required : {"input", "stem", "blocks", "bottleneck", "decoder", "head"}) {
    if (!seen[required]) throw FormatError(std::string("config: missing section [") + required + "]");
  }
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
  if (!out) throw FormatError("write to '" + path + "' failed");
}

inline void save_config(const NetworkConfig& cfg, const std::string& path) { write_text_file(path, config_to_text(cfg)); }

inline NetworkConfig load_config(const std::string& path) { return config_from_text(read_text_file(path)); }

// ---------------------------------------------------------------------------
// binary checkpoint

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[0]) | (static_cast<unsigned char>(s[1]) << 8));
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out(kWeightsMagic.begin(), kWeightsMagic.end());
  detail::put_u16(out, kWeightsVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.values.size() != e.shape.size()) throw ShapeError("checkpoint entry " + e.name + " payload/shape mismatch");
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    for (std::size_t d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kWeightsMagic.begin())) throw FormatError("checkpoint: bad magic bytes");
  const std::uint16_t version = r.u16("version");
  if (version != kWeightsVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("entry count");
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t len = r.u32("name length");
    e.name = std::string(r.take(len, "name"));
    e.shape = Shape{r.u32("dims"), r.u32("dims"), r.u32("dims"), r.u32("dims")};
    if (!e.shape.valid()) throw FormatError("checkpoint: entry " + e.name + " has a zero dimension");
    std::size_t n = 1;
    for (std::size_t d : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) {
      if (d > bytes.size() / 4 || n * d > bytes.size() / 4) throw FormatError("checkpoint truncated while reading payload");
      n *= d;
    }
    auto payload = r.take(n * 4, "payload");
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * k + b])) << (8 * b);
      e.values[k] = std::bit_cast<float>(bits);
    }
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after last entry");
  return entries;
}

template <typename T>
std::vector<CheckpointEntry> to_entries(const NetworkGraph& g, const ParameterSet<T>& ps) {
  check_parameters(g, ps);
  std::vector<CheckpointEntry> entries;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CheckpointEntry e{g.params()[i].name, ps[i].shape(), {}};
    e.values.reserve(ps[i].size());
    for (T v : ps[i].values()) e.values.push_back(static_cast<float>(v));
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Matches entries to the graph's parameter table by position, checking names and shapes.
template <typename T = float>
ParameterSet<T> from_entries(const NetworkGraph& g, const std::vector<CheckpointEntry>& entries) {
  if (entries.size() != g.params().size()) {
    throw FormatError("checkpoint has " + std::to_string(entries.size()) + " entries, graph expects " +
                      std::to_string(g.params().size()));
  }
  ParameterSet<T> ps;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& want = g.params()[i];
    if (entries[i].name != want.name) {
      throw FormatError("checkpoint entry " + std::to_string(i) + " is '" + entries[i].name + "', expected '" +
                        want.name + "'");
    }
    if (entries[i].shape != want.shape) {
      throw FormatError("checkpoint entry " + want.name + " has shape " + entries[i].shape.str() + ", graph expects " +
                        want.shape.str());
    }
    std::vector<T> vals(entries[i].values.begin(), entries[i].values.end());
    ps.tensors.emplace_back(want.shape, std::move(vals));
  }
  return ps;
}

template <typename T>
void save_weights(const NetworkGraph& g, const ParameterSet<T>& ps, const std::string& path) {
  write_text_file(path, encode_checkpoint(to_entries(g, ps)));
}

template <typename T = float>
ParameterSet<T> load_weights(const NetworkGraph& g, const std::string& path) {
  return from_entries<T>(g, decode_checkpoint(read_text_file(path)));
}

}  // namespace nanodepth::arch
