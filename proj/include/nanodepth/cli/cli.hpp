#pragma once

// Command-line front end. Machine-readable lines start with "#DATA ".

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/arch/graph.hpp"
#include "nanodepth/arch/network.hpp"
#include "nanodepth/arch/serialize.hpp"
#include "nanodepth/diagnostics/gradcheck_suite.hpp"
#include "nanodepth/engine/parallel.hpp"
#include "nanodepth/explorer/explorer.hpp"
#include "nanodepth/explorer/space_io.hpp"
#include "nanodepth/io/bench.hpp"
#include "nanodepth/io/pfm.hpp"
#include "nanodepth/metrics/metrics.hpp"
#include "nanodepth/netscore/netscore.hpp"
#include "nanodepth/trainer/train.hpp"

namespace nanodepth::cli {

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kNetworkTolerance = 1e-4;

/// Named configs (nyu, kitti, minimal, toy) or a config file path.
inline arch::NetworkConfig resolve_config(const std::string& name) {
  if (name == "nyu" || name == "nyu-default") return arch::default_config(arch::Variant::kNyu);
  if (name == "kitti" || name == "kitti-default") return arch::default_config(arch::Variant::kKitti);
  if (name == "minimal") return arch::minimal_config();
  if (name == "toy") return trainer::toy_config({});
  return arch::load_config(name);
}

namespace detail {

inline std::string fx(double v, int digits = 6) { return metrics::format_fixed(v, digits); }

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline std::string shape_text(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

inline metrics::CropRect parse_crop(const std::string& spec, std::size_t h, std::size_t w) {
  if (spec == "outdoor") return metrics::kOutdoorEvalCrop.resolve(h, w);
  if (spec == "indoor") return metrics::kIndoorEvalCrop.resolve(h, w);
  std::vector<std::size_t> v;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', start), spec.size());
    v.push_back(arch::parse_count(std::string_view(spec).substr(start, end - start), "crop"));
    start = end + 1;
  }
  if (v.size() != 4) throw FormatError("crop must be none, outdoor, indoor or top,left,height,width");
  return metrics::CropRect{v[0], v[1], v[2], v[3]};
}

struct Options {
  unsigned threads = 1;
  std::string config;
  std::string out;

  // infer
  std::string weights, input;
  std::uint64_t seed = 1;

  // eval
  std::string pred, gt, crop = "none";
  double min_depth = 1e-3, max_depth = 80.0;

  // netscore
  double delta1 = 0, absrel = 0, params_m = 0, macs_g = 0;
  netscore::NetScoreInputs weights_ns;

  // search
  std::string space, mode = "proxy";
  bool emit_space = false, oracle = false;
  explorer::ExplorerConfig xc;
  std::size_t budget = 50, top = 10;

  // train
  trainer::TrainOptions train;
  std::uint64_t scene_seed = 1;

  // bench
  io::BenchOptions bench;

  // gradcheck
  std::size_t cases = 100, gc_batch = 1, gc_size = 32;
  bool ops_only = false, network_only = false;
};

inline int cmd_build(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o.config);
  const auto g = arch::build_network(cfg);
  if (o.out.empty()) {
    out << arch::config_to_text(cfg);
  } else {
    arch::save_config(cfg, o.out);
  }
  out << "#DATA build name=" << cfg.name << " nodes=" << g.nodes().size() << " params=" << arch::count_params(g)
      << " macs=" << arch::count_macs(g) << " input=" << shape_text(g.input_shape()) << "\n";
  return 0;
}

inline int cmd_count(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o.config);
  const auto g = arch::build_network(cfg);
  const auto p = arch::count_params(g), m = arch::count_macs(g);
  out << "params " << fx(static_cast<double>(p) / 1e6, 2) << "M, MACs " << fx(static_cast<double>(m) / 1e9, 2)
      << "G\n";
  out << "#DATA count name=" << cfg.name << " params=" << p << " macs=" << m
      << " params_m=" << fx(static_cast<double>(p) / 1e6, 2) << " macs_g=" << fx(static_cast<double>(m) / 1e9, 2)
      << "\n";
  return 0;
}

inline int cmd_infer(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o.config);
  const auto g = arch::build_network(cfg);
  arch::ParameterSet<float> ps;
  if (o.weights.empty()) {
    Rng rng(o.seed);
    ps = arch::init_parameters<float>(g, rng);
  } else {
    ps = arch::load_weights<float>(g, o.weights);
  }
  const auto rgb = io::read_ppm<float>(o.input);
  if (rgb.h() != cfg.height || rgb.w() != cfg.width) {
    throw ShapeError("input image is " + std::to_string(rgb.h()) + "x" + std::to_string(rgb.w()) + ", config '" +
                     cfg.name + "' expects " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  const auto depth = arch::forward(g, ps, rgb);
  io::write_pfm(o.out, io::depth_to_pfm(depth));
  const auto [lo, hi] = std::minmax_element(depth.values().begin(), depth.values().end());
  out << "#DATA infer output=" << o.out << " height=" << depth.h() << " width=" << depth.w() << " min=" << fx(*lo)
      << " max=" << fx(*hi) << "\n";
  return 0;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  const auto pred = io::pfm_to_tensor<double>(io::read_pfm(o.pred));
  const auto gt = io::pfm_to_tensor<double>(io::read_pfm(o.gt));
  if (pred.c() != 1 || gt.c() != 1) throw ShapeError("eval expects single-channel depth maps");
  metrics::EvalOptions eo;
  eo.depth_min = o.min_depth;
  eo.depth_max = o.max_depth;
  if (o.crop != "none") eo.crop = parse_crop(o.crop, gt.h(), gt.w());
  const auto r = metrics::evaluate(pred, gt, eo);
  out << metrics::to_key_value(r);
  out << "#DATA eval " << metrics::kRecordFields << "=" << metrics::to_record(r) << "\n";
  return 0;
}

inline int cmd_netscore(const Options& o, std::ostream& out) {
  netscore::NetScoreInputs in = o.weights_ns;
  in.a = netscore::composite_accuracy(o.delta1, o.absrel);
  in.p = o.params_m;
  in.m = o.macs_g;
  const double s = netscore::netscore(in);
  out << "NetScore " << fx(s, 4) << "\n";
  out << "#DATA netscore a=" << fx(in.a) << " p_m=" << fx(in.p) << " m_g=" << fx(in.m) << " kappa=" << fx(in.kappa)
      << " beta=" << fx(in.beta) << " gamma=" << fx(in.gamma) << " score=" << fx(s) << "\n";
  return 0;
}

inline void candidate_line(std::ostream& out, std::size_t rank, const explorer::Candidate& c) {
  out << "#DATA candidate rank=" << rank << " index=" << c.index << " feasible=" << c.feasible
      << " score=" << fx(c.score) << " delta1=" << fx(c.measured.delta1) << " abs_rel=" << fx(c.measured.abs_rel)
      << " params=" << c.measured.params << " macs=" << c.measured.macs << "\n";
}

inline int cmd_search(const Options& o, std::ostream& out) {
  explorer::SearchProblem p;
  if (o.space.empty()) {
    p.space = explorer::default_space();
  } else {
    p = explorer::problem_from_text(arch::read_text_file(o.space));
  }
  if (o.emit_space) {
    out << explorer::problem_to_text(p);
    return 0;
  }
  explorer::EvalSettings es;
  es.proxy = p.proxy;
  es.budget = o.budget;
  es.seed = o.xc.seed;
  if (o.mode == "train") {
    es.mode = explorer::EvalMode::kTrain;
  } else if (o.mode != "proxy") {
    throw ValidationError("search", "mode must be proxy or train");
  }
  const auto r = o.oracle ? explorer::brute_force_oracle(p.space, p.constraints, es)
                          : explorer::search(p.space, p.constraints, o.xc, es);
  out << "rank  index  feasible  score      delta1    params    macs\n";
  for (std::size_t i = 0; i < std::min(o.top, r.ranked.size()); ++i) {
    const auto& c = r.ranked[i];
    char buf[160];
    std::snprintf(buf, sizeof buf, "%4zu  %5llu  %8s  %9.4f  %8.4f  %8llu  %llu\n", i + 1,
                  static_cast<unsigned long long>(c.index), c.feasible ? "yes" : "no", c.score, c.measured.delta1,
                  static_cast<unsigned long long>(c.measured.params), static_cast<unsigned long long>(c.measured.macs));
    out << buf;
    candidate_line(out, i + 1, c);
  }
  if (r.infeasible()) {
    out << "no feasible candidate within the search budget\n";
    out << "#DATA search result=infeasible evaluations=" << r.evaluations << "\n";
    return 0;
  }
  if (!o.out.empty()) arch::save_config(r.best->config, o.out);
  out << "#DATA search result=best index=" << r.best->index << " score=" << fx(r.best->score)
      << " params=" << r.best->measured.params << " macs=" << r.best->measured.macs
      << " evaluations=" << r.evaluations << "\n";
  return 0;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  trainer::TrainOptions t = o.train;
  t.scene.seed = o.scene_seed;
  auto cfg = o.config.empty() || o.config == "toy" ? trainer::toy_config(t.scene) : resolve_config(o.config);
  t.scene.height = cfg.height;
  t.scene.width = cfg.width;
  const auto g = arch::build_network(cfg);
  t.on_eval = [&](const trainer::EvalRecord& r) {
    out << "step " << r.step << " loss " << fx(r.loss, 4) << " rmse " << fx(r.report.rmse, 4) << " delta1 "
        << fx(r.report.delta1, 4) << "\n";
    out << "#DATA train step=" << r.step << " loss=" << fx(r.loss) << " " << metrics::kRecordFields << "="
        << metrics::to_record(r.report) << "\n";
  };
  const auto res = trainer::train<float>(g, t);
  const double final_rmse = res.history.back().report.rmse;
  out << "#DATA baseline depth=" << fx(res.baseline_depth) << " " << metrics::kRecordFields << "="
      << metrics::to_record(res.baseline) << "\n";
  out << "#DATA train_summary steps=" << t.steps << " rmse=" << fx(final_rmse)
      << " baseline_rmse=" << fx(res.baseline.rmse)
      << " improvement=" << fx(1.0 - final_rmse / res.baseline.rmse) << "\n";
  return 0;
}

inline int cmd_bench(const Options& o, std::ostream& out) {
  const auto g = arch::build_network(resolve_config(o.config));
  Rng rng(o.seed);
  const auto ps = arch::init_parameters<float>(g, rng);
  const auto r = io::bench(g, ps, o.bench);
  out << fx(r.images_per_second, 2) << " images/s\n";
  out << "#DATA bench images_per_second=" << fx(r.images_per_second) << " wall_seconds=" << fx(r.wall_seconds)
      << " image=" << shape_text(r.image) << " batch=" << r.batch << " warmup=" << r.warmup
      << " iterations=" << r.iterations << " runs=" << r.runs << " threads=" << r.threads << "\n";
  return 0;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& err) {
  bool ok = true;
  auto report = [&](const diagnostics::CheckSummary& s, double tol) {
    const bool pass = s.max_rel_error <= tol;
    ok = ok && pass;
    out << "#DATA gradcheck check=" << s.name << " cases=" << s.cases << " elements=" << s.elements
        << " max_rel_error=" << sci(s.max_rel_error) << " tolerance=" << sci(tol) << " pass=" << pass << "\n";
  };
  if (!o.network_only) {
    for (const auto& s : diagnostics::check_ops(o.cases, o.seed)) report(s, kOpTolerance);
  }
  if (!o.ops_only) {
    diagnostics::NetworkCheckOptions no;
    no.cases = o.cases;
    no.batch = o.gc_batch;
    no.seed = o.seed;
    for (auto mode : {arch::Mode::kTraining, arch::Mode::kInference}) {
      no.mode = mode;
      auto s = diagnostics::check_network(arch::minimal_config(o.gc_size, o.gc_size), no);
      s.name = mode == arch::Mode::kTraining ? "network.training" : "network.inference";
      report(s, kNetworkTolerance);
    }
  }
  if (!ok) err << "error: gradient check exceeded tolerance\n";
  return ok ? 0 : 1;
}

}  // namespace detail

/// Runs one invocation; `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  detail::Options o;
  CLI::App app{"nanodepth: compact depth-estimation networks on the CPU", "nanodepth"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--threads", o.threads, "engine worker threads")->check(CLI::Range(1u, 256u));

  auto* build = app.add_subcommand("build", "validate a config and emit it in canonical form");
  build->add_option("--config", o.config, "nyu, kitti, minimal, toy or a file")->required();
  build->add_option("--out", o.out, "write the config here instead of stdout");

  auto* count = app.add_subcommand("count", "parameter and MAC counts");
  count->add_option("--config", o.config)->required();

  auto* infer = app.add_subcommand("infer", "depth map for one PPM image");
  infer->add_option("--config", o.config)->required();
  infer->add_option("--weights", o.weights, "NDNW checkpoint; random init when absent");
  infer->add_option("--seed", o.seed, "init seed when no weights are given");
  infer->add_option("--input", o.input)->required();
  infer->add_option("--output", o.out)->required();

  auto* eval = app.add_subcommand("eval", "metrics of a predicted PFM against a reference PFM");
  eval->add_option("--pred", o.pred)->required();
  eval->add_option("--gt", o.gt)->required();
  eval->add_option("--crop", o.crop, "none, outdoor, indoor or top,left,height,width");
  eval->add_option("--min-depth", o.min_depth);
  eval->add_option("--max-depth", o.max_depth);

  auto* ns = app.add_subcommand("netscore", "NetScore of accuracy and cost figures");
  ns->add_option("--delta1", o.delta1)->required();
  ns->add_option("--absrel", o.absrel)->required();
  ns->add_option("--params-m", o.params_m, "parameters in millions")->required();
  ns->add_option("--macs-g", o.macs_g, "MACs in billions")->required();
  ns->add_option("--kappa", o.weights_ns.kappa);
  ns->add_option("--beta", o.weights_ns.beta);
  ns->add_option("--gamma", o.weights_ns.gamma);

  auto* search = app.add_subcommand("search", "constrained architecture search");
  search->add_option("--space", o.space, "search space file");
  search->add_flag("--emit-space", o.emit_space, "print the space file and stop");
  search->add_flag("--oracle", o.oracle, "exhaustive enumeration instead of evolution");
  search->add_option("--mode", o.mode, "proxy or train");
  search->add_option("--budget", o.budget, "training steps per candidate in train mode");
  search->add_option("--seed", o.xc.seed);
  search->add_option("--population", o.xc.population);
  search->add_option("--offspring", o.xc.offspring);
  search->add_option("--generations", o.xc.generations);
  search->add_option("--rate", o.xc.mutation_rate);
  search->add_option("--top", o.top, "ranked rows to print");
  search->add_option("--out", o.out, "write the winning config here");

  auto* train = app.add_subcommand("train", "train on synthetic scenes");
  train->add_option("--config", o.config, "defaults to toy");
  train->add_option("--steps", o.train.steps);
  train->add_option("--batch", o.train.batch);
  train->add_option("--seed", o.train.init_seed, "weight init seed");
  train->add_option("--scene-seed", o.scene_seed);
  train->add_option("--eval-every", o.train.eval_every);
  train->add_option("--heldout", o.train.heldout);
  train->add_option("--lr", o.train.adam.lr);
  train->add_option("--checkpoint", o.train.checkpoint_path);
  train->add_option("--log", o.train.log_path);
  train->add_option("--manifest", o.train.manifest_path);

  auto* bench = app.add_subcommand("bench", "forward-pass throughput");
  bench->add_option("--config", o.config)->required();
  bench->add_option("--iterations", o.bench.iterations);
  bench->add_option("--warmup", o.bench.warmup);
  bench->add_option("--runs", o.bench.runs);
  bench->add_option("--batch", o.bench.batch);
  bench->add_option("--seed", o.seed);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--cases", o.cases);
  gc->add_option("--seed", o.seed);
  gc->add_option("--batch", o.gc_batch, "network check batch size");
  gc->add_option("--size", o.gc_size, "network check input height and width");
  gc->add_flag("--ops-only", o.ops_only);
  gc->add_flag("--network-only", o.network_only);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    for (const auto& a : args) {
      if (a.empty() || a[0] == '-') continue;
      if (!app.get_subcommand_no_throw(a)) what = "unknown subcommand '" + a + "'";
      break;
    }
    err << app.help() << "error: " << what << "\n";
    return 2;
  }

  set_num_threads(o.threads);
  try {
    if (build->parsed()) return detail::cmd_build(o, out);
    if (count->parsed()) return detail::cmd_count(o, out);
    if (infer->parsed()) return detail::cmd_infer(o, out);
    if (eval->parsed()) return detail::cmd_eval(o, out);
    if (ns->parsed()) return detail::cmd_netscore(o, out);
    if (search->parsed()) return detail::cmd_search(o, out);
    if (train->parsed()) return detail::cmd_train(o, out);
    if (bench->parsed()) return detail::cmd_bench(o, out);
    if (gc->parsed()) return detail::cmd_gradcheck(o, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace nanodepth::cli
