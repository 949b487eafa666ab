#pragma once

// Forward-pass throughput measurement.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <vector>

#include "nanodepth/arch/network.hpp"
#include "nanodepth/engine/parallel.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::io {

struct BenchOptions {
  std::size_t iterations = 10;  // timed forward passes per run
  std::size_t warmup = 2;       // untimed passes before the first run
  std::size_t runs = 3;         // the median run is reported
  std::size_t batch = 1;
};

struct BenchReport {
  double images_per_second = 0.0;
  double wall_seconds = 0.0;  // duration of the median run
  Shape image;
  std::size_t warmup = 0;
  std::size_t iterations = 0;
  std::size_t runs = 0;
  std::size_t batch = 1;
  std::size_t threads = 1;
};

template <typename T = float>
BenchReport bench(const arch::NetworkGraph& g, const arch::ParameterSet<T>& ps, const BenchOptions& o = {}) {
  if (o.iterations < 10) throw ValidationError("bench", "at least 10 measured iterations are required");
  if (o.runs == 0 || o.batch == 0) throw ValidationError("bench", "runs and batch must be positive");
  Shape s = g.input_shape();
  s.n = o.batch;
  const Tensor<T> input(s, T(0.5));
  for (std::size_t i = 0; i < o.warmup; ++i) (void)arch::forward(g, ps, input);

  std::vector<double> seconds;
  for (std::size_t r = 0; r < o.runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < o.iterations; ++i) (void)arch::forward(g, ps, input);
    seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(seconds.begin(), seconds.end());
  BenchReport rep;
  rep.wall_seconds = seconds[seconds.size() / 2];
  rep.images_per_second = static_cast<double>(o.iterations * o.batch) / rep.wall_seconds;
  rep.image = g.input_shape();
  rep.warmup = o.warmup;
  rep.iterations = o.iterations;
  rep.runs = o.runs;
  rep.batch = o.batch;
  rep.threads = num_threads();
  return rep;
}

}  // namespace nanodepth::io
