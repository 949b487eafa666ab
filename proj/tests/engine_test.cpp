#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "nanodepth/engine/gradcheck.hpp"
#include "nanodepth/engine/init.hpp"
#include "nanodepth/engine/ops.hpp"
#include "nanodepth/engine/parallel.hpp"
#include "test_util.hpp"

namespace nd = nanodepth;
using nd::Shape;
using nd::Tensor;
using nanodepth::testing::rand_dim;
using nanodepth::testing::random_distinct;
using nanodepth::testing::random_off_zero;
using nanodepth::testing::random_tensor;

namespace {

constexpr double kOpTolerance = 1e-5;

Tensor<double> identity_1x1(std::size_t c) {
  Tensor<double> w(Shape{c, c, 1, 1});
  for (std::size_t i = 0; i < c; ++i) w.at(i, i, 0, 0) = 1.0;
  return w;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

TEST(Conv2d, SinglePixelIdentity) {
  Tensor<double> x(Shape{1, 1, 1, 1}, std::vector<double>{5.0});
  Tensor<double> w(Shape{1, 1, 1, 1}, std::vector<double>{1.0});
  auto y = nd::conv2d(x, w, nd::ConvOptions{1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 5.0);
}

TEST(Conv2d, StemOutputShape) {
  Tensor<float> x(Shape{1, 3, 480, 640}, 0.5f);
  Tensor<float> w(Shape{15, 3, 7, 7}, 0.01f);
  auto y = nd::conv2d(x, w, nd::ConvOptions{2, 3});
  EXPECT_EQ(y.shape(), (Shape{1, 15, 240, 320}));
}

TEST(Conv2d, IdentityKernelIsExact) {
  nd::Rng rng(3);
  auto x = random_tensor(Shape{2, 5, 7, 6}, rng);
  auto y = nd::conv2d(x, identity_1x1(5), nd::ConvOptions{1, 0});
  EXPECT_EQ(y, x);
}

TEST(Conv2d, MatchesNaiveLoop) {
  nd::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cin = rand_dim(rng, 1, 3), cout = rand_dim(rng, 1, 3), k = 2 * rand_dim(rng, 0, 2) + 1;
    const std::size_t stride = rand_dim(rng, 1, 2), pad = rand_dim(rng, 0, k / 2 + 1);
    auto x = random_tensor(Shape{2, cin, rand_dim(rng, k, 9), rand_dim(rng, k, 9)}, rng);
    auto w = random_tensor(Shape{cout, cin, k, k}, rng);
    auto b = random_tensor(Shape{cout, 1, 1, 1}, rng);
    auto y = nd::conv2d(x, w, b.values(), nd::ConvOptions{stride, pad});
    for (std::size_t n = 0; n < y.n(); ++n)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t r = 0; r < y.h(); ++r)
          for (std::size_t q = 0; q < y.w(); ++q) {
            double acc = b[o];
            for (std::size_t i = 0; i < cin; ++i)
              for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw) {
                  const long ir = static_cast<long>(r * stride + kh) - static_cast<long>(pad);
                  const long iq = static_cast<long>(q * stride + kw) - static_cast<long>(pad);
                  if (ir < 0 || iq < 0 || ir >= static_cast<long>(x.h()) || iq >= static_cast<long>(x.w())) continue;
                  acc += w.at(o, i, kh, kw) * x.at(n, i, static_cast<std::size_t>(ir), static_cast<std::size_t>(iq));
                }
            EXPECT_NEAR(y.at(n, o, r, q), acc, 1e-12);
          }
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tensor<double> x(Shape{1, 3, 8, 8});
  Tensor<double> w(Shape{4, 2, 3, 3});
  EXPECT_THROW(nd::conv2d(x, w, nd::ConvOptions{1, 1}), nd::ShapeError);
}

TEST(Conv2d, RejectsNonPositiveOutput) {
  Tensor<double> x(Shape{1, 1, 2, 2});
  Tensor<double> w(Shape{1, 1, 5, 5});
  EXPECT_THROW(nd::conv2d(x, w, nd::ConvOptions{1, 0}), nd::ShapeError);
}

// ---------------------------------------------------------------------------
// depthwise / pointwise

TEST(DepthwiseConv, CenterKernelIsIdentity) {
  nd::Rng rng(5);
  auto x = random_tensor(Shape{2, 4, 6, 5}, rng);
  Tensor<double> w(Shape{4, 1, 3, 3});
  for (std::size_t c = 0; c < 4; ++c) w.at(c, 0, 1, 1) = 1.0;
  EXPECT_EQ(nd::depthwise_conv2d(x, w, nd::ConvOptions{1, 1}), x);
}

TEST(DepthwiseConv, AveragingKernelPreservesConstantInterior) {
  Tensor<double> x(Shape{1, 2, 6, 6}, 3.25);
  Tensor<double> w(Shape{2, 1, 3, 3}, 1.0 / 9.0);
  auto y = nd::depthwise_conv2d(x, w, nd::ConvOptions{1, 1});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t r = 1; r < 5; ++r)
      for (std::size_t q = 1; q < 5; ++q) EXPECT_NEAR(y.at(0, c, r, q), 3.25, 1e-14);
}

TEST(DepthwiseConv, RejectsChannelMismatch) {
  Tensor<double> x(Shape{1, 3, 4, 4});
  Tensor<double> w(Shape{2, 1, 3, 3});
  EXPECT_THROW(nd::depthwise_conv2d(x, w, nd::ConvOptions{1, 1}), nd::ShapeError);
}

TEST(PointwiseConv, IdentityMatrix) {
  nd::Rng rng(9);
  auto x = random_tensor(Shape{1, 6, 3, 4}, rng);
  EXPECT_EQ(nd::pointwise_conv(x, identity_1x1(6)), x);
}

TEST(PointwiseConv, AllOnesSumsChannels) {
  Tensor<double> x(Shape{1, 3, 1, 1}, std::vector<double>{1, 2, 3});
  Tensor<double> w(Shape{1, 3, 1, 1}, 1.0);
  EXPECT_EQ(nd::pointwise_conv(x, w)[0], 6.0);
}

TEST(PointwiseConv, RejectsSpatialKernel) {
  Tensor<double> x(Shape{1, 3, 4, 4});
  Tensor<double> w(Shape{2, 3, 3, 3});
  EXPECT_THROW(nd::pointwise_conv(x, w), nd::ShapeError);
}

// ---------------------------------------------------------------------------
// SELU

TEST(Selu, ReferenceValues) {
  const nd::SeluParams p;
  EXPECT_EQ(nd::selu_scalar(0.0, p), 0.0);
  EXPECT_NEAR(nd::selu_scalar(1.0, p), 1.05070099, 1e-8);
  EXPECT_NEAR(nd::selu_scalar(-1.0, p), -1.111330, 1e-6);
  EXPECT_NEAR(nd::selu_scalar(-50.0, p), -p.lambda * p.alpha, 1e-12);
  EXPECT_NEAR(-p.lambda * p.alpha, -1.758099, 1e-6);
  EXPECT_GT(p.lambda, 1.0);
  EXPECT_GT(p.alpha, 1.0);
}

TEST(Selu, MonotoneContinuousAndBounded) {
  const nd::SeluParams p;
  double prev = nd::selu_scalar(-30.0, p);
  for (double x = -30.0; x <= 30.0; x += 1e-3) {
    const double y = nd::selu_scalar(x, p);
    EXPECT_GE(y, prev);
    EXPECT_GT(y, -p.lambda * p.alpha);
    prev = y;
  }
  EXPECT_NEAR(nd::selu_scalar(-1e-12, p), nd::selu_scalar(1e-12, p), 1e-11);
}

TEST(Selu, DerivativeAtZeroIsRightDerivative) {
  EXPECT_EQ(nd::selu_grad_scalar(0.0, nd::SeluParams{}), nd::SeluParams{}.lambda);
}

TEST(Selu, ScalarGradientMatchesFiniteDifferences) {
  const nd::SeluParams p;
  auto f = [&](double x) { return nd::selu_scalar(x, p); };
  auto df = [&](double x) { return nd::selu_grad_scalar(x, p); };
  EXPECT_LT(nd::grad_check_scalar(f, df, 1.0), 1e-8);
  EXPECT_LT(nd::grad_check_scalar(f, df, -1.0), 1e-8);
}

// ---------------------------------------------------------------------------
// batchnorm

TEST(BatchNorm, IdentityParameters) {
  nd::Rng rng(2);
  auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
  std::vector<double> zero(3, 0.0), one(3, 1.0);
  auto y = nd::batchnorm<double>(x, zero, one, one, zero, 1e-12);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-11);
}

TEST(BatchNorm, HandValue) {
  Tensor<double> x(Shape{1, 1, 1, 1}, std::vector<double>{3.0});
  std::vector<double> mean{1.0}, var{4.0}, gamma{1.0}, beta{0.0};
  auto y = nd::batchnorm<double>(x, mean, var, gamma, beta, 1e-5);
  EXPECT_NEAR(y[0], 2.0 / std::sqrt(4.0 + 1e-5), 1e-15);
  EXPECT_NEAR(y[0], 0.99999, 1e-5);
}

TEST(BatchNorm, RejectsVectorLengthMismatch) {
  Tensor<double> x(Shape{1, 3, 2, 2});
  std::vector<double> two(2, 1.0), three(3, 1.0);
  EXPECT_THROW(nd::batchnorm<double>(x, two, three, three, three, 1e-5), nd::ShapeError);
}

TEST(BatchNorm, TrainingStatisticsAndRunningUpdate) {
  nd::Rng rng(4);
  auto x = random_tensor(Shape{3, 2, 5, 5}, rng, 2.0);
  std::vector<double> gamma{1.0, 1.0}, beta{0.0, 0.0};
  nd::BatchNormCache<double> cache;
  auto y = nd::batchnorm_train<double>(x, gamma, beta, 1e-5, cache);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, sq = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (double v : y.plane(n, c)) s += v, sq += v * v;
    EXPECT_NEAR(s / 75.0, 0.0, 1e-12);
    EXPECT_NEAR(sq / 75.0, cache.var[c] / (cache.var[c] + 1e-5), 1e-9);
  }
  std::vector<double> rm{0.0, 0.0}, rv{1.0, 1.0};
  nd::update_running_stats<double>(rm, rv, cache.mean, cache.var, 0.99);
  EXPECT_NEAR(rm[0], 0.01 * cache.mean[0], 1e-15);
  EXPECT_NEAR(rv[1], 0.99 + 0.01 * cache.var[1], 1e-15);
}

// ---------------------------------------------------------------------------
// pooling / upsampling / concat

TEST(Pool2, ConstantInputStaysConstant) {
  Tensor<double> x(Shape{1, 2, 4, 6}, 1.5);
  for (auto kind : {nd::PoolKind::kAvg, nd::PoolKind::kMax}) {
    auto y = nd::pool2(x, kind);
    ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 3}));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 1.5);
  }
}

TEST(Pool2, WindowValues) {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(nd::pool2(x, nd::PoolKind::kAvg)[0], 2.5);
  EXPECT_EQ(nd::pool2(x, nd::PoolKind::kMax)[0], 4.0);
}

TEST(Pool2, BlockTransitionShape) {
  Tensor<float> x(Shape{1, 57, 60, 80});
  EXPECT_EQ(nd::pool2(x, nd::PoolKind::kAvg).shape(), (Shape{1, 57, 30, 40}));
}

TEST(Pool2, RejectsOddDims) {
  Tensor<double> x(Shape{1, 1, 3, 4});
  EXPECT_THROW(nd::pool2(x, nd::PoolKind::kMax), nd::ShapeError);
}

TEST(Pool2, MaxTiesRouteToFirstIndex) {
  Tensor<double> x(Shape{1, 1, 2, 2}, 1.0);
  Tensor<double> dy(Shape{1, 1, 1, 1}, 1.0);
  auto dx = nd::pool2_backward(x, dy, nd::PoolKind::kMax);
  EXPECT_EQ(dx[0], 1.0);
  EXPECT_EQ(dx[1] + dx[2] + dx[3], 0.0);
}

TEST(Upsample, ConstantInput) {
  Tensor<double> x(Shape{1, 1, 3, 5}, 2.0);
  auto y = nd::bilinear_upsample2x(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 6, 10}));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 2.0, 1e-15);
}

TEST(Upsample, AlignCornersRamp) {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  auto y = nd::bilinear_upsample2x(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const double row[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t q = 0; q < 4; ++q) EXPECT_NEAR(y.at(0, 0, r, q), row[q], 1e-15);
}

TEST(Upsample, DecoderShapeAndCorners) {
  nd::Rng rng(8);
  auto x = random_tensor(Shape{1, 2, 15, 20}, rng);
  auto y = nd::bilinear_upsample2x(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 30, 40}));
  EXPECT_EQ(y.at(0, 1, 0, 0), x.at(0, 1, 0, 0));
  EXPECT_EQ(y.at(0, 1, 29, 39), x.at(0, 1, 14, 19));
  EXPECT_EQ(y.at(0, 0, 0, 39), x.at(0, 0, 0, 19));
}

TEST(Concat, ChannelCountsAndOrder) {
  Tensor<double> a(Shape{1, 15, 4, 4}, 1.0), b(Shape{1, 16, 4, 4}, 2.0);
  auto y = nd::concat_channels(a, b);
  ASSERT_EQ(y.c(), 31u);
  EXPECT_EQ(y.at(0, 14, 3, 3), 1.0);
  EXPECT_EQ(y.at(0, 15, 0, 0), 2.0);
}

TEST(Concat, BackwardSplitsExactly) {
  nd::Rng rng(12);
  auto dy = random_tensor(Shape{2, 5, 3, 3}, rng);
  auto [da, db] = nd::concat_channels_backward(dy, 2);
  EXPECT_EQ(nd::concat_channels(da, db), dy);
}

TEST(Concat, RejectsSpatialMismatch) {
  Tensor<double> a(Shape{1, 1, 4, 4}), b(Shape{1, 1, 4, 2});
  EXPECT_THROW(nd::concat_channels(a, b), nd::ShapeError);
  Tensor<double> c(Shape{2, 1, 4, 4});
  EXPECT_THROW(nd::concat_channels(a, c), nd::ShapeError);
}

// ---------------------------------------------------------------------------
// initialization

TEST(LecunNormal, MomentsOverOneMillionDraws) {
  nd::Rng rng(2024);
  const std::size_t fan_in = 50;
  auto t = nd::lecun_normal_init<double>(Shape{1000, 1000, 1, 1}, fan_in, rng);
  double s = 0, sq = 0;
  for (double v : t.values()) s += v;
  const double mean = s / static_cast<double>(t.size());
  for (double v : t.values()) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(t.size());
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0 / fan_in, 0.02 / fan_in);
}

TEST(LecunNormal, SameSeedSameTensor) {
  nd::Rng a(77), b(77);
  EXPECT_EQ(nd::lecun_normal_init<float>(Shape{4, 3, 3, 3}, 27, a), nd::lecun_normal_init<float>(Shape{4, 3, 3, 3}, 27, b));
}

TEST(LecunNormal, RejectsZeroFanIn) {
  nd::Rng rng(1);
  EXPECT_THROW(nd::lecun_normal_init<float>(Shape{1, 1, 1, 1}, 0, rng), nd::ShapeError);
}

// ---------------------------------------------------------------------------
// gradient checks: >= 100 randomized small configurations per op

using Inputs = std::vector<Tensor<double>>;

TEST(GradCheck, Conv2d) {
  nd::Rng rng(100);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = rand_dim(rng, 1, 3), cout = rand_dim(rng, 1, 3), k = 2 * rand_dim(rng, 0, 2) + 1;
    const nd::ConvOptions opt{rand_dim(rng, 1, 2), rand_dim(rng, 0, k / 2)};
    const Shape xs{rand_dim(rng, 1, 2), cin, rand_dim(rng, k, 6), rand_dim(rng, k, 6)};
    Inputs in{random_tensor(xs, rng), random_tensor(Shape{cout, cin, k, k}, rng), random_tensor(Shape{cout, 1, 1, 1}, rng)};
    auto res = nd::grad_check(
        [&](const Inputs& v) { return nd::conv2d(v[0], v[1], v[2].values(), opt); },
        [&](const Inputs& v, const Tensor<double>& dy) {
          auto g = nd::conv2d_backward(v[0], v[1], dy, opt);
          return Inputs{g.input, g.weights, g.bias};
        },
        in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
  }
}

TEST(GradCheck, DepthwiseConv) {
  nd::Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = rand_dim(rng, 1, 4), k = 2 * rand_dim(rng, 0, 2) + 1;
    const nd::ConvOptions opt{rand_dim(rng, 1, 2), rand_dim(rng, 0, k / 2)};
    Inputs in{random_tensor(Shape{rand_dim(rng, 1, 2), c, rand_dim(rng, k, 6), rand_dim(rng, k, 6)}, rng),
              random_tensor(Shape{c, 1, k, k}, rng)};
    auto res = nd::grad_check([&](const Inputs& v) { return nd::depthwise_conv2d(v[0], v[1], opt); },
                              [&](const Inputs& v, const Tensor<double>& dy) {
                                auto g = nd::depthwise_conv2d_backward(v[0], v[1], dy, opt);
                                return Inputs{g.input, g.weights};
                              },
                              in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
  }
}

TEST(GradCheck, PointwiseConv) {
  nd::Rng rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = rand_dim(rng, 1, 5), cout = rand_dim(rng, 1, 5);
    Inputs in{random_tensor(Shape{1, cin, 3, 3}, rng), random_tensor(Shape{cout, cin, 1, 1}, rng)};
    auto res = nd::grad_check([&](const Inputs& v) { return nd::pointwise_conv(v[0], v[1]); },
                              [&](const Inputs& v, const Tensor<double>& dy) {
                                auto g = nd::pointwise_conv_backward(v[0], v[1], dy);
                                return Inputs{g.input, g.weights};
                              },
                              in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
  }
}

TEST(GradCheck, PointwiseSpecExample) {
  nd::Rng rng(7);
  Inputs in{random_tensor(Shape{1, 4, 3, 3}, rng), random_tensor(Shape{4, 4, 1, 1}, rng)};
  auto res = nd::grad_check([&](const Inputs& v) { return nd::pointwise_conv(v[0], v[1]); },
                            [&](const Inputs& v, const Tensor<double>& dy) {
                              auto g = nd::pointwise_conv_backward(v[0], v[1], dy);
                              return Inputs{g.input, g.weights};
                            },
                            in);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(GradCheck, Selu) {
  nd::Rng rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    Inputs in{random_off_zero(Shape{rand_dim(rng, 1, 2), rand_dim(rng, 1, 3), rand_dim(rng, 1, 4), rand_dim(rng, 1, 4)}, rng)};
    auto res = nd::grad_check([&](const Inputs& v) { return nd::selu(v[0]); },
                              [&](const Inputs& v, const Tensor<double>& dy) { return Inputs{nd::selu_backward(v[0], dy)}; },
                              in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
  }
}

TEST(GradCheck, BatchNormTraining) {
  nd::Rng rng(104);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = rand_dim(rng, 1, 3);
    Inputs in{random_tensor(Shape{rand_dim(rng, 1, 3), c, rand_dim(rng, 2, 4), rand_dim(rng, 2, 4)}, rng),
              random_tensor(Shape{c, 1, 1, 1}, rng), random_tensor(Shape{c, 1, 1, 1}, rng)};
    auto res = nd::grad_check(
        [&](const Inputs& v) {
          nd::BatchNormCache<double> cache;
          return nd::batchnorm_train<double>(v[0], v[1].values(), v[2].values(), 1e-5, cache);
        },
        [&](const Inputs& v, const Tensor<double>& dy) {
          nd::BatchNormCache<double> cache;
          nd::batchnorm_train<double>(v[0], v[1].values(), v[2].values(), 1e-5, cache);
          auto g = nd::batchnorm_train_backward<double>(cache, v[1].values(), dy);
          return Inputs{g.input, Tensor<double>(v[1].shape(), g.gamma), Tensor<double>(v[2].shape(), g.beta)};
        },
        in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
  }
}

TEST(GradCheck, BatchNormInference) {
  nd::Rng rng(105);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = rand_dim(rng, 1, 3);
    std::vector<double> mean(c), var(c);
    for (std::size_t i = 0; i < c; ++i) mean[i] = rng.normal(), var[i] = rng.uniform(0.5, 2.0);
    Inputs in{random_tensor(Shape{rand_dim(rng, 1, 2), c, 3, 3}, rng), random_tensor(Shape{c, 1, 1, 1}, rng),
              random_tensor(Shape{c, 1, 1, 1}, rng)};
    auto res = nd::grad_check(
        [&](const Inputs& v) { return nd::batchnorm<double>(v[0], mean, var, v[1].values(), v[2].values(), 1e-5); },
        [&](const Inputs& v, const Tensor<double>& dy) {
          auto g = nd::batchnorm_backward<double>(v[0], mean, var, v[1].values(), 1e-5, dy);
          return Inputs{g.input, Tensor<double>(v[1].shape(), g.gamma), Tensor<double>(v[2].shape(), g.beta)};
        },
        in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
  }
}

TEST(GradCheck, Pooling) {
  nd::Rng rng(106);
  for (int trial = 0; trial < 100; ++trial) {
    const auto kind = trial % 2 == 0 ? nd::PoolKind::kAvg : nd::PoolKind::kMax;
    Inputs in{random_distinct(Shape{rand_dim(rng, 1, 2), rand_dim(rng, 1, 3), 2 * rand_dim(rng, 1, 3), 2 * rand_dim(rng, 1, 3)}, rng)};
    auto res = nd::grad_check([&](const Inputs& v) { return nd::pool2(v[0], kind); },
                              [&](const Inputs& v, const Tensor<double>& dy) {
                                return Inputs{nd::pool2_backward(v[0], dy, kind)};
                              },
                              in);
    ASSERT_LT(res.max_rel_error, kOpTolerance) << "trial " << trial;
    if (kind == nd::PoolKind::kAvg) {
      ASSERT_LT(res.max_rel_error, 1e-7);
    }
  }
}

TEST(GradCheck, Upsample) {
  nd::Rng rng(107);
  for (int trial = 0; trial < 100; ++trial) {
    Inputs in{random_tensor(Shape{rand_dim(rng, 1, 2), rand_dim(rng, 1, 2), rand_dim(rng, 1, 4), rand_dim(rng, 1, 4)}, rng)};
    auto res = nd::grad_check([&](const Inputs& v) { return nd::bilinear_upsample2x(v[0]); },
                              [&](const Inputs& v, const Tensor<double>& dy) {
                                return Inputs{nd::bilinear_upsample2x_backward(v[0].shape(), dy)};
                              },
                              in);
    ASSERT_LT(res.max_rel_error, 1e-7) << "trial " << trial;
  }
}

TEST(GradCheck, Concat) {
  nd::Rng rng(108);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rand_dim(rng, 1, 2), h = rand_dim(rng, 1, 3), w = rand_dim(rng, 1, 3);
    const std::size_t ca = rand_dim(rng, 1, 3);
    Inputs in{random_tensor(Shape{n, ca, h, w}, rng), random_tensor(Shape{n, rand_dim(rng, 1, 3), h, w}, rng)};
    auto res = nd::grad_check([&](const Inputs& v) { return nd::concat_channels(v[0], v[1]); },
                              [&](const Inputs&, const Tensor<double>& dy) {
                                auto [a, b] = nd::concat_channels_backward(dy, ca);
                                return Inputs{a, b};
                              },
                              in);
    ASSERT_LT(res.max_rel_error, 1e-7) << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------
// self-normalization and determinism

TEST(SelfNormalization, DeepSeluStackKeepsUnitMoments) {
  nd::Rng rng(31337);
  auto x = random_tensor<double>(Shape{1, 64, 64, 64}, rng);
  for (int layer = 0; layer < 24; ++layer) {
    auto w = nd::lecun_normal_init<double>(Shape{64, 64, 1, 1}, 64, rng);
    x = nd::selu(nd::pointwise_conv(x, w));
    double s = 0, sq = 0;
    for (double v : x.values()) s += v;
    const double mean = s / static_cast<double>(x.size());
    for (double v : x.values()) sq += (v - mean) * (v - mean);
    const double var = sq / static_cast<double>(x.size());
    EXPECT_GE(mean, -0.1) << "layer " << layer;
    EXPECT_LE(mean, 0.1) << "layer " << layer;
    EXPECT_GE(var, 0.8) << "layer " << layer;
    EXPECT_LE(var, 1.25) << "layer " << layer;
  }
}

TEST(Determinism, KernelsIndependentOfThreadCount) {
  nd::Rng rng(55);
  auto x = random_tensor<float>(Shape{2, 6, 12, 10}, rng);
  auto w = random_tensor<float>(Shape{5, 6, 3, 3}, rng);
  auto dw = random_tensor<float>(Shape{6, 1, 3, 3}, rng);
  auto run = [&] {
    auto y = nd::conv2d(x, w, nd::ConvOptions{1, 1});
    auto g = nd::conv2d_backward(x, w, y, nd::ConvOptions{1, 1});
    auto z = nd::depthwise_conv2d(x, dw, nd::ConvOptions{2, 1});
    auto gz = nd::depthwise_conv2d_backward(x, dw, z, nd::ConvOptions{2, 1});
    return std::vector<Tensor<float>>{y, g.input, g.weights, z, gz.input, gz.weights};
  };
  nd::set_num_threads(1);
  auto a = run();
  nd::set_num_threads(4);
  auto b = run();
  nd::set_num_threads(1);
  EXPECT_EQ(a, b);
}
