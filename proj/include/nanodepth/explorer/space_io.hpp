#pragma once

// Text form of a search space and its constraints, in the config dialect.

#include <sstream>
#include <string>

#include "nanodepth/arch/serialize.hpp"
#include "nanodepth/explorer/explorer.hpp"

namespace nanodepth::explorer {

inline constexpr std::string_view kSpaceHeader = "nanodepth-space v1";

struct SearchProblem {
  SearchSpace space;
  IndicatorConstraints constraints;
  ProxyOptions proxy;

  friend bool operator==(const SearchProblem& a, const SearchProblem& b) {
    return a.space == b.space && a.constraints == b.constraints && a.proxy.tau == b.proxy.tau;
  }
};

namespace detail {

inline std::string range_text(const IntRange& r) {
  return "lo=" + std::to_string(r.lo) + " hi=" + std::to_string(r.hi) + " step=" + std::to_string(r.step);
}

inline IntRange parse_range(arch::Fields& f) {
  IntRange r{f.count("lo"), f.count("hi"), f.has("step") ? f.count("step") : 1};
  f.finish();
  return r;
}

}  // namespace detail

inline std::string problem_to_text(const SearchProblem& p) {
  const auto& s = p.space;
  std::ostringstream os;
  os << kSpaceHeader << "\n[input]\nsize height=" << s.height << " width=" << s.width << "\n[space]\n"
     << "blocks count=" << s.blocks << "\n"
     << "modules " << detail::range_text(s.modules) << "\n"
     << "growth " << detail::range_text(s.growth) << "\n"
     << "expand " << detail::range_text(s.expand_mult) << "\n"
     << "transition " << detail::range_text(s.transition) << "\n"
     << "stages kinds=";
  for (std::size_t i = 0; i < s.stage_kinds.size(); ++i) {
    os << (i ? "," : "") << (s.stage_kinds[i] == arch::StageKind::kEp ? "ep" : "conv");
  }
  os << "\nstem out=" << s.stem_channels << "\nproj divisor=" << s.proj_divisor << "\nbottleneck out=" << s.bottleneck
     << "\n[decoder]\n";
  for (const auto& d : s.decoder) os << "upconv a=" << d.a << " b=" << d.b << "\n";
  os << "[head]\noutput offset=" << arch::format_real(s.head_offset) << " scale=" << arch::format_real(s.head_scale)
     << "\n[constraints]\nindicator delta1_min=" << arch::format_real(p.constraints.delta1_min)
     << " params_max=" << p.constraints.params_max;
  if (p.constraints.macs_max) os << " macs_max=" << *p.constraints.macs_max;
  os << "\n[proxy]\ncapacity tau=" << arch::format_real(p.proxy.tau) << "\n";
  return os.str();
}

inline SearchProblem problem_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return "space line " + std::to_string(lineno); };
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line != kSpaceHeader) throw FormatError(where() + ": expected header '" + std::string(kSpaceHeader) + "'");
    header = true;
    break;
  }
  if (!header) throw FormatError("space: missing header '" + std::string(kSpaceHeader) + "'");

  SearchProblem p;
  p.space.decoder.clear();
  std::string section;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError(where() + ": malformed section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto tok = arch::split_ws(line);
    const std::string key = section + "/" + tok[0];
    arch::Fields f(tok, 1, where());
    auto& s = p.space;
    if (key == "input/size") {
      s.height = f.count("height");
      s.width = f.count("width");
      f.finish();
    } else if (key == "space/blocks") {
      s.blocks = f.count("count");
      f.finish();
    } else if (key == "space/modules") {
      s.modules = detail::parse_range(f);
    } else if (key == "space/growth") {
      s.growth = detail::parse_range(f);
    } else if (key == "space/expand") {
      s.expand_mult = detail::parse_range(f);
    } else if (key == "space/transition") {
      s.transition = detail::parse_range(f);
    } else if (key == "space/stages") {
      s.stage_kinds.clear();
      std::istringstream kinds(f.str("kinds"));
      std::string k;
      while (std::getline(kinds, k, ',')) {
        if (k == "ep") {
          s.stage_kinds.push_back(arch::StageKind::kEp);
        } else if (k == "conv") {
          s.stage_kinds.push_back(arch::StageKind::kConv);
        } else {
          throw FormatError(where() + ": stage kind must be ep or conv, got '" + k + "'");
        }
      }
      f.finish();
    } else if (key == "space/stem") {
      s.stem_channels = f.count("out");
      f.finish();
    } else if (key == "space/proj") {
      s.proj_divisor = f.count("divisor");
      f.finish();
    } else if (key == "space/bottleneck") {
      s.bottleneck = f.count("out");
      f.finish();
    } else if (key == "decoder/upconv") {
      s.decoder.push_back(DecoderWidths{f.count("a"), f.count("b")});
      f.finish();
    } else if (key == "head/output") {
      s.head_offset = f.real("offset");
      s.head_scale = f.real("scale");
      f.finish();
    } else if (key == "constraints/indicator") {
      p.constraints.delta1_min = f.real("delta1_min");
      p.constraints.params_max = f.count("params_max");
      p.constraints.macs_max.reset();
      if (f.has("macs_max")) p.constraints.macs_max = f.count("macs_max");
      f.finish();
    } else if (key == "proxy/capacity") {
      p.proxy.tau = f.real("tau");
      f.finish();
    } else {
      throw FormatError(where() + ": unexpected '" + tok[0] + "' in section [" + section + "]");
    }
  }
  try {
    validate_space(p.space);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("space: ") + e.what());
  }
  if (p.space.proj_divisor == 0) throw FormatError("space: proj divisor must be positive");
  if (!(p.proxy.tau > 0.0)) throw FormatError("space: proxy tau must be positive");
  return p;
}

}  // namespace nanodepth::explorer
