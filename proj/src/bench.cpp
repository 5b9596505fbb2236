#include "kpg/bench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "kpg/errors.hpp"

namespace kpg {

BenchResult bench_throughput(const std::function<void(std::size_t)>& decode_one, std::size_t examples,
                             std::size_t runs) {
  require(examples > 0, "bench: no examples");
  require(runs > 0, "bench: runs must be positive");
  BenchResult r;
  r.examples = examples;
  using Clock = std::chrono::steady_clock;
  for (std::size_t run = 0; run < runs; ++run) {
    const auto start = Clock::now();
    for (std::size_t i = 0; i < examples; ++i) {
      try {
        decode_one(i);
      } catch (const std::exception& e) {
        throw NumericError("bench: decoding example " + std::to_string(i) + " failed: " + e.what());
      }
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    r.per_run.push_back(double(examples) / seconds);
  }
  double sum = 0;
  for (double v : r.per_run) sum += v;
  r.mean = sum / double(runs);
  for (double v : r.per_run) r.max_relative_deviation = std::max(r.max_relative_deviation, std::abs(v - r.mean) / r.mean);
  return r;
}

BenchResult bench_model(const Model<float>& model, const std::vector<std::vector<int>>& sources, std::size_t runs,
                        GenerateOptions opts) {
  return bench_throughput([&](std::size_t i) { (void)greedy_generate(model, sources[i], opts); }, sources.size(),
                          runs);
}

std::string BenchResult::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "examples: " << examples << '\n' << "threads: " << threads << '\n';
  for (std::size_t i = 0; i < per_run.size(); ++i) os << "run" << i + 1 << ".examples_per_s: " << per_run[i] << '\n';
  os << "mean.examples_per_s: " << mean << '\n' << "max_relative_deviation: " << max_relative_deviation << '\n';
  if (!stable()) os << "warning: run-to-run variation above 10%\n";
  return os.str();
}

}  // namespace kpg
