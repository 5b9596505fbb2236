#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "kpg/decode.hpp"
#include "kpg/model.hpp"

namespace kpg {

struct BenchResult {
  std::vector<double> per_run;  // examples per second
  double mean = 0.0;
  double max_relative_deviation = 0.0;  // max |run − mean| / mean
  std::size_t examples = 0;
  int threads = 1;

  bool stable(double tolerance = 0.10) const { return max_relative_deviation <= tolerance; }
  std::string to_text() const;
};

// Times `decode_one(i)` for every i < examples, `runs` times, with a
// monotonic wall clock. Exceptions from decode_one propagate with the
// example index attached.
BenchResult bench_throughput(const std::function<void(std::size_t)>& decode_one, std::size_t examples,
                             std::size_t runs = 3);

// Greedy decoding of pre-tokenized sources, one at a time, no padding.
BenchResult bench_model(const Model<float>& model, const std::vector<std::vector<int>>& sources,
                        std::size_t runs = 3, GenerateOptions opts = {});

}  // namespace kpg
