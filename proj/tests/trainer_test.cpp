#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "nanodepth/arch/serialize.hpp"
#include "nanodepth/diagnostics/gradcheck_suite.hpp"
#include "nanodepth/engine/parallel.hpp"
#include "nanodepth/trainer/train.hpp"
#include "test_util.hpp"

using namespace nanodepth;
using namespace nanodepth::trainer;

namespace {

Tensor<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{1, 1, 1, n}, std::move(v));
}

arch::ParameterSet<double> random_set(const std::vector<Shape>& shapes, Rng& rng) {
  arch::ParameterSet<double> ps;
  for (const auto& s : shapes) ps.tensors.push_back(nanodepth::testing::random_tensor<double>(s, rng));
  return ps;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nanodepth_trainer_" + name)).string();
}

TrainOptions short_run(std::size_t steps) {
  TrainOptions o;
  o.steps = steps;
  o.batch = 2;
  o.heldout = 4;
  o.eval_every = 2;
  return o;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Rng rng(1);
  const std::vector<Shape> shapes{Shape{4, 3, 3, 3}, Shape{1, 1, 1, 7}};
  for (int k = 0; k < 20; ++k) {
    auto ps = random_set(shapes, rng);
    const auto before = ps;
    auto grads = random_set(shapes, rng);
    auto st = make_adam_state(ps);
    adam_step(st, ps, grads);
    EXPECT_EQ(st.t, 1u);
    for (std::size_t j = 0; j < ps.size(); ++j) {
      for (std::size_t i = 0; i < ps[j].size(); ++i) {
        const double g = grads[j][i];
        const double expect = 5e-5 * g / (std::abs(g) + 1e-8);
        EXPECT_NEAR(before[j][i] - ps[j][i], expect, 1e-15 + 1e-9 * std::abs(expect));
      }
    }
  }
}

TEST(Adam, ClosedFormSecondStep) {
  auto ps = arch::ParameterSet<double>{{row({0.0})}};
  auto st = make_adam_state(ps);
  adam_step(st, ps, arch::ParameterSet<double>{{row({2.0})}});
  adam_step(st, ps, arch::ParameterSet<double>{{row({-1.0})}});
  const double m = 0.9 * 0.2 + 0.1 * -1.0, v = 0.999 * 0.004 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(ps[0][0], -5e-5 * 2.0 / (2.0 + 1e-8) - 5e-5 * mh / (std::sqrt(vh) + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientFromRestIsNoOp) {
  Rng rng(2);
  const std::vector<Shape> shapes{Shape{2, 2, 2, 2}};
  auto ps = random_set(shapes, rng);
  const auto before = ps;
  auto st = make_adam_state(ps);
  arch::ParameterSet<double> zero{{Tensor<double>(shapes[0], 0.0)}};
  for (int k = 0; k < 5; ++k) adam_step(st, ps, zero);
  EXPECT_EQ(ps, before);
  EXPECT_EQ(st.t, 5u);
}

TEST(Adam, FrozenEntriesUntouched) {
  Rng rng(3);
  const std::vector<Shape> shapes{Shape{1, 1, 1, 3}, Shape{1, 1, 1, 3}};
  auto ps = random_set(shapes, rng);
  const auto before = ps;
  auto st = make_adam_state(ps, {}, {false, true});
  adam_step(st, ps, random_set(shapes, rng));
  EXPECT_NE(ps[0], before[0]);
  EXPECT_EQ(ps[1], before[1]);
}

TEST(Adam, GraphFreezesRunningStatistics) {
  const auto g = arch::build_network(arch::minimal_config(32, 32));
  Rng rng(1);
  auto ps = arch::init_parameters<double>(g, rng);
  const auto st = make_adam_state(g, ps);
  for (std::size_t i = 0; i < g.params().size(); ++i) {
    const auto& name = g.params()[i].name;
    const bool running = name.find("running_") != std::string::npos;
    EXPECT_EQ(st.frozen[i], running) << name;
  }
}

TEST(Adam, DeterministicAcrossRuns) {
  const std::vector<Shape> shapes{Shape{3, 3, 3, 3}, Shape{1, 1, 1, 5}};
  auto run = [&] {
    Rng rng(4);
    auto ps = random_set(shapes, rng);
    auto st = make_adam_state(ps);
    for (int k = 0; k < 50; ++k) adam_step(st, ps, random_set(shapes, rng));
    return ps;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ShapeMismatchThrows) {
  Rng rng(5);
  auto ps = random_set({Shape{1, 1, 2, 2}}, rng);
  auto st = make_adam_state(ps);
  EXPECT_THROW(adam_step(st, ps, random_set({Shape{1, 1, 2, 3}}, rng)), ShapeError);
  EXPECT_THROW(adam_step(st, ps, arch::ParameterSet<double>{}), ShapeError);
  EXPECT_EQ(st.t, 0u);
}

TEST(L1Loss, HandExample) {
  const auto r = l1_loss(row({1, 3}), row({2, 2}));
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.grad, row({-0.5, 0.5}));
}

TEST(L1Loss, EqualInputsGiveZero) {
  const auto r = l1_loss(row({1, 2, 3}), row({1, 2, 3}));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.grad, row({0, 0, 0}));
}

TEST(L1Loss, MaskAndPermutation) {
  const auto m = row({1, 0, 1});
  const auto r = l1_loss(row({1, 100, 5}), row({2, 0, 2}), &m);
  EXPECT_DOUBLE_EQ(r.value, 2.0);
  EXPECT_EQ(r.grad, row({-0.5, 0, 0.5}));
  EXPECT_DOUBLE_EQ(l1_loss(row({5, 1}), row({2, 2})).value, l1_loss(row({1, 5}), row({2, 2})).value);
  const auto none = row({0, 0, 0});
  EXPECT_THROW(l1_loss(row({1, 2, 3}), row({1, 2, 3}), &none), DomainError);
  EXPECT_THROW(l1_loss(row({1, 2}), row({1, 2, 3})), ShapeError);
}

TEST(Scene, DeterministicAndInRange) {
  SceneConfig c;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto a = scene_at<double>(c, kTrainStream, i), b = scene_at<double>(c, kTrainStream, i);
    EXPECT_EQ(a.rgb, b.rgb);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_EQ(a.depth.shape(), (Shape{1, 1, 48, 64}));
    for (std::size_t k = 0; k < a.depth.size(); ++k) {
      EXPECT_GE(a.depth[k], c.near);
      EXPECT_LE(a.depth[k], c.far);
    }
  }
  EXPECT_NE(scene_at<double>(c, kTrainStream, 0).depth, scene_at<double>(c, kHeldoutStream, 0).depth);
}

TEST(Scene, NoiselessShadingIsMonotoneInDepth) {
  SceneConfig c;
  c.noise = 0.0;
  c.max_rects = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto s = scene_at<double>(c, kTrainStream, i);
    const std::size_t n = s.depth.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.depth[a] < s.depth[b]; });
    for (std::size_t k = 1; k < n; ++k) {
      const std::size_t p = order[k - 1], q = order[k];
      if (s.depth[p] < s.depth[q]) {
        EXPECT_GT(s.rgb[p], s.rgb[q]);
      } else {
        EXPECT_EQ(s.rgb[p], s.rgb[q]);
      }
    }
  }
}

TEST(Scene, RectanglesAppear) {
  SceneConfig c;
  c.min_rects = 3;
  c.max_rects = 3;
  c.noise = 0.0;
  // constant-depth runs longer than a gradient plane allows
  const auto s = scene_at<double>(c, kTrainStream, 0);
  std::map<double, std::size_t> counts;
  for (std::size_t k = 0; k < s.depth.size(); ++k) ++counts[s.depth[k]];
  std::size_t largest = 0;
  for (const auto& [d, n] : counts) largest = std::max(largest, n);
  EXPECT_GT(largest, 64u);
}

TEST(Scene, InvalidConfigsRejected) {
  SceneConfig c;
  c.near = 0.0;
  EXPECT_THROW(validate_scene_config(c), ValidationError);
  c = {};
  c.far = c.near;
  EXPECT_THROW(validate_scene_config(c), ValidationError);
  c = {};
  c.height = 40;
  EXPECT_THROW(validate_scene_config(c), ValidationError);
  c = {};
  c.min_rects = 5;
  c.max_rects = 2;
  EXPECT_THROW(validate_scene_config(c), ValidationError);
}

TEST(Train, MedianHelper) {
  EXPECT_EQ(median_of(row({3, 1, 2})), 2.0);
  EXPECT_EQ(median_of(row({4, 1, 3, 2})), 2.5);
}

TEST(Train, ToyConfigShape) {
  const auto g = arch::build_network(toy_config({}));
  EXPECT_EQ(arch::count_params(g), 21245u);
  EXPECT_EQ(g.input_shape(), (Shape{1, 3, 48, 64}));
}

TEST(Train, ZeroStepsKeepsInitialization) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(0);
  const auto r = train<float>(g, o);
  Rng rng(o.init_seed);
  EXPECT_EQ(r.params, arch::init_parameters<float>(g, rng));
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].step, 0u);
}

TEST(Train, HeldOutMetricsEqualEvaluate) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(3);
  const auto r = train<float>(g, o);
  const auto held = scene_batch<float>(o.scene, kHeldoutStream, index_range(0, o.heldout));
  const auto pred = predict(g, r.params, held.rgb);
  EXPECT_EQ(r.history.back().report, metrics::evaluate(pred, held.depth, scene_eval_options(o.scene)));
  EXPECT_EQ(r.history.back().loss, l1_loss(pred, held.depth).value);
  const Tensor<float> constant(held.depth.shape(), static_cast<float>(median_of(held.depth)));
  EXPECT_EQ(r.baseline, metrics::evaluate(constant, held.depth, scene_eval_options(o.scene)));
  std::vector<std::size_t> steps;
  for (const auto& h : r.history) steps.push_back(h.step);
  EXPECT_EQ(steps, (std::vector<std::size_t>{0, 2, 3}));
}

TEST(Train, LossFallsOverShortRun) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(60);
  o.eval_every = 60;
  const auto r = train<float>(g, o);
  EXPECT_LT(r.history.back().loss, r.history.front().loss);
}

TEST(Train, BitwiseReproducibleAcrossThreadCounts) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(4);
  o.checkpoint_path = temp_path("a.ndnw");
  o.log_path = temp_path("a.log");
  set_num_threads(1);
  const auto a = train<float>(g, o);
  o.checkpoint_path = temp_path("b.ndnw");
  o.log_path = temp_path("b.log");
  set_num_threads(4);
  const auto b = train<float>(g, o);
  set_num_threads(1);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].report, b.history[i].report);
  }
  EXPECT_EQ(arch::read_text_file(temp_path("a.ndnw")), arch::read_text_file(temp_path("b.ndnw")));
  EXPECT_EQ(arch::read_text_file(temp_path("a.log")), arch::read_text_file(temp_path("b.log")));
}

TEST(Train, WritesArtifacts) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(2);
  o.checkpoint_path = temp_path("c.ndnw");
  o.log_path = temp_path("c.log");
  o.manifest_path = temp_path("c.manifest");
  const auto r = train<float>(g, o);
  EXPECT_EQ(arch::load_weights<float>(g, o.checkpoint_path), r.params);
  const auto log = arch::read_text_file(o.log_path);
  EXPECT_EQ(log.rfind("# step,loss,abs_rel", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_NE(arch::read_text_file(o.manifest_path).find("scene_seed=1"), std::string::npos);
}

TEST(Train, DivergenceIsReported) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(5);
  o.adam.lr = 1e30;
  EXPECT_THROW(train<float>(g, o), DivergenceError);
}

TEST(Train, MismatchedSceneRejected) {
  const auto g = arch::build_network(toy_config({}));
  auto o = short_run(1);
  o.scene.width = 96;
  EXPECT_THROW(train<float>(g, o), ValidationError);
}

// One small Adam step on a fixed batch lowers that batch's loss.
TEST(Train, SingleStepDecreasesLoss) {
  SceneConfig sc;
  sc.height = 32;
  sc.width = 32;
  const auto g = arch::build_network(toy_config(sc));
  std::size_t wins = 0;
  const std::size_t trials = 100;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(1000 + t);
    auto ps = arch::init_parameters<double>(g, rng);
    const auto b = scene_batch<double>(sc, kTrainStream, {2 * t, 2 * t + 1});
    arch::Tape<double> tape;
    const auto y0 = arch::forward(g, ps, b.rgb, arch::Mode::kTraining, &tape);
    const auto l0 = l1_loss(y0, b.depth);
    const auto grads = arch::backward(g, ps, tape, l0.grad);
    AdamOptions small;
    small.lr = 1e-6;
    auto st = make_adam_state(g, ps, small);
    adam_step(st, ps, grads.params);
    const auto l1 = l1_loss(arch::forward(g, ps, b.rgb, arch::Mode::kTraining), b.depth);
    wins += l1.value < l0.value;
  }
  EXPECT_GE(wins, 95u);
}

TEST(NetworkGradient, BatchOfEightMatchesFiniteDifferences) {
  diagnostics::NetworkCheckOptions o;
  o.batch = 8;
  o.cases = 30;
  for (auto mode : {arch::Mode::kTraining, arch::Mode::kInference}) {
    o.mode = mode;
    const auto s = diagnostics::check_network(arch::minimal_config(32, 32), o);
    EXPECT_EQ(s.cases, 30u);
    EXPECT_LT(s.max_rel_error, 1e-4);
  }
}
