#pragma once

// Supervised training on synthetic scenes with masked L1 and Adam, with
// periodic evaluation on a fixed held-out set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nanodepth/arch/config.hpp"
#include "nanodepth/arch/network.hpp"
#include "nanodepth/arch/serialize.hpp"
#include "nanodepth/metrics/metrics.hpp"
#include "nanodepth/trainer/adam.hpp"
#include "nanodepth/trainer/loss.hpp"
#include "nanodepth/trainer/scene.hpp"

namespace nanodepth::trainer {

inline constexpr std::uint64_t kTrainStream = 0;
inline constexpr std::uint64_t kHeldoutStream = 1;

/// Two-block network sized for the synthetic task. The head maps its output
/// onto the scene depth range (centre + half-width * y).
inline arch::NetworkConfig toy_config(const SceneConfig& scene) {
  arch::NetworkConfig cfg;
  cfg.name = "toy";
  cfg.height = scene.height;
  cfg.width = scene.width;
  cfg.stem = arch::StemSpec{7, 16, PoolKind::kMax};
  cfg.blocks.push_back(arch::make_dense_block(16, {8, 8, 8}, 4, 4));
  cfg.transitions.push_back(arch::TransitionSpec{24, PoolKind::kAvg});
  cfg.blocks.push_back(arch::make_dense_block(24, {8, 8, 8}, 4, 4));
  cfg.bottleneck = 32;
  cfg.decoder.push_back(arch::DecoderBlockSpec{arch::ep_stage(0, 32), arch::ep_stage(0, 24), arch::default_skip(2, 0)});
  cfg.decoder.push_back(arch::DecoderBlockSpec{arch::ep_stage(0, 16), arch::ep_stage(0, 16), arch::default_skip(2, 1)});
  cfg.head.output_offset = 0.5 * (scene.near + scene.far);
  cfg.head.output_scale = 0.5 * (scene.far - scene.near);
  arch::refresh_decoder_expansions(cfg);
  return cfg;
}

struct EvalRecord {
  std::size_t step = 0;
  double loss = 0.0;  // L1 over the held-out set
  metrics::MetricsReport report;
};

struct TrainOptions {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::uint64_t init_seed = 1;
  std::size_t eval_every = 250;
  std::size_t heldout = 64;
  SceneConfig scene;
  AdamOptions adam;
  std::string checkpoint_path;  // empty: not written
  std::string log_path;
  std::string manifest_path;
  std::function<void(const EvalRecord&)> on_eval;
};

template <typename T>
struct TrainResult {
  arch::ParameterSet<T> params;
  std::vector<EvalRecord> history;  // step 0, every eval_every steps, and the last step
  metrics::MetricsReport baseline;  // constant median depth
  double baseline_depth = 0.0;
};

/// Metric options matching the scene depth range.
inline metrics::EvalOptions scene_eval_options(const SceneConfig& s) {
  metrics::EvalOptions o;
  o.depth_min = std::min(1e-3, s.near);
  o.depth_max = s.far;
  return o;
}

inline std::vector<std::uint64_t> index_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = first + i;
  return v;
}

/// Inference over a batch in chunks, stacked back into one tensor.
template <typename T>
Tensor<T> predict(const arch::NetworkGraph& g, const arch::ParameterSet<T>& ps, const Tensor<T>& rgb,
                  std::size_t chunk = 16) {
  const Shape s = rgb.shape();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  const std::size_t in_img = s.c * s.h * s.w, out_img = s.h * s.w;
  for (std::size_t first = 0; first < s.n; first += chunk) {
    const std::size_t n = std::min(chunk, s.n - first);
    Tensor<T> part(Shape{n, s.c, s.h, s.w});
    std::copy_n(rgb.values().begin() + static_cast<std::ptrdiff_t>(first * in_img), n * in_img, part.values().begin());
    const Tensor<T> y = arch::forward(g, ps, part);
    std::copy(y.values().begin(), y.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(first * out_img));
  }
  return out;
}

template <typename T>
double median_of(const Tensor<T>& t) {
  std::vector<double> v(t.values().begin(), t.values().end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline std::string eval_log_line(const EvalRecord& r) {
  return std::to_string(r.step) + "," + metrics::format_fixed(r.loss) + "," + metrics::to_record(r.report);
}

inline std::string seed_manifest(const TrainOptions& o) {
  std::ostringstream os;
  const auto& s = o.scene;
  os << "scene_seed=" << s.seed << "\n"
     << "scene_size=" << s.height << "x" << s.width << "\n"
     << "rects=" << s.min_rects << ".." << s.max_rects << "\n"
     << "depth_range=" << arch::format_real(s.near) << ".." << arch::format_real(s.far) << "\n"
     << "noise=" << arch::format_real(s.noise) << "\n"
     << "train_stream=" << kTrainStream << " indices=0.." << (o.steps * o.batch) << " (exclusive)\n"
     << "heldout_stream=" << kHeldoutStream << " indices=0.." << o.heldout << " (exclusive)\n"
     << "init_seed=" << o.init_seed << "\n"
     << "batch=" << o.batch << "\n"
     << "steps=" << o.steps << "\n";
  return os.str();
}

template <typename T = float>
TrainResult<T> train(const arch::NetworkGraph& g, const TrainOptions& o) {
  validate_scene_config(o.scene);
  if (o.batch == 0 || o.heldout == 0) throw ValidationError("train", "batch and held-out sizes must be positive");
  const Shape& is = g.input_shape();
  if (is.h != o.scene.height || is.w != o.scene.width || is.c != 3) {
    throw ValidationError("train", "network input " + is.str() + " does not match the scene size");
  }

  Rng init_rng(o.init_seed);
  TrainResult<T> res{arch::init_parameters<T>(g, init_rng), {}, {}, 0.0};
  auto state = make_adam_state(g, res.params, o.adam);

  const Scene<T> held = scene_batch<T>(o.scene, kHeldoutStream, index_range(0, o.heldout));
  const auto eval_opts = scene_eval_options(o.scene);
  res.baseline_depth = median_of(held.depth);
  res.baseline = metrics::evaluate(Tensor<T>(held.depth.shape(), static_cast<T>(res.baseline_depth)), held.depth, eval_opts);

  std::string log = "# step,loss," + std::string(metrics::kRecordFields) + "\n";
  auto evaluate_now = [&](std::size_t step) {
    const Tensor<T> pred = predict(g, res.params, held.rgb);
    EvalRecord r{step, l1_loss(pred, held.depth).value, metrics::evaluate(pred, held.depth, eval_opts)};
    if (!std::isfinite(r.loss)) throw DivergenceError("held-out loss is not finite at step " + std::to_string(step));
    res.history.push_back(r);
    log += eval_log_line(r) + "\n";
    if (o.on_eval) o.on_eval(r);
  };

  evaluate_now(0);
  for (std::size_t step = 1; step <= o.steps; ++step) {
    const Scene<T> b = scene_batch<T>(o.scene, kTrainStream, index_range((step - 1) * o.batch, o.batch));
    arch::Tape<T> tape;
    const Tensor<T> y = arch::forward(g, res.params, b.rgb, arch::Mode::kTraining, &tape);
    const auto loss = l1_loss(y, b.depth);
    if (!std::isfinite(loss.value)) {
      throw DivergenceError("training loss is not finite at step " + std::to_string(step));
    }
    const auto grads = arch::backward(g, res.params, tape, loss.grad);
    arch::update_running_stats(g, res.params, tape);
    adam_step(state, res.params, grads.params);
    if (step % std::max<std::size_t>(o.eval_every, 1) == 0 || step == o.steps) evaluate_now(step);
  }

  if (!o.checkpoint_path.empty()) arch::save_weights(g, res.params, o.checkpoint_path);
  if (!o.log_path.empty()) arch::write_text_file(o.log_path, log);
  if (!o.manifest_path.empty()) arch::write_text_file(o.manifest_path, seed_manifest(o));
  return res;
}

}  // namespace nanodepth::trainer
