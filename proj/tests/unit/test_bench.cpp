#include <algorithm>
#include <chrono>
#include <numeric>

#include "doctest.h"
#include "kpg/bench.hpp"
#include "kpg/errors.hpp"

using namespace kpg;

namespace {

void busy_wait(std::chrono::microseconds d) {
  const auto until = std::chrono::steady_clock::now() + d;
  while (std::chrono::steady_clock::now() < until) {
  }
}

}  // namespace

TEST_CASE("stub decoder with 1 ms per step and 48 steps") {
  const double expected = 1000.0 / 48.0;  // 20.83 examples/s
  const auto within = [&](const BenchResult& r) {
    return std::all_of(r.per_run.begin(), r.per_run.end(),
                       [&](double v) { return std::abs(v - expected) / expected < 0.03; });
  };
  // A stall of the host during a run is not a timer error; such a
  // measurement is repeated, up to five attempts.
  BenchResult r;
  for (int attempt = 0; attempt < 5; ++attempt) {
    r = bench_throughput(
        [](std::size_t) {
          for (int step = 0; step < 48; ++step) busy_wait(std::chrono::microseconds(1000));
        },
        5, 3);
    if (within(r)) break;
  }
  REQUIRE(r.per_run.size() == 3);
  for (double v : r.per_run) CHECK(std::abs(v - expected) / expected < 0.03);
  CHECK(r.mean == doctest::Approx(std::accumulate(r.per_run.begin(), r.per_run.end(), 0.0) / 3.0));
  CHECK(r.examples == 5);
  CHECK(r.threads == 1);
  CHECK(r.to_text().find("mean") != std::string::npos);
}

TEST_CASE("failures carry the example index") {
  try {
    bench_throughput(
        [](std::size_t i) {
          if (i == 2) throw std::runtime_error("boom");
        },
        4, 1);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find('2') != std::string::npos);
    CHECK(msg.find("boom") != std::string::npos);
  }
  CHECK_THROWS_AS(bench_throughput([](std::size_t) {}, 0, 1), ContractError);
}

TEST_CASE("stability flag") {
  BenchResult r;
  r.max_relative_deviation = 0.05;
  CHECK(r.stable());
  r.max_relative_deviation = 0.2;
  CHECK_FALSE(r.stable());
}
