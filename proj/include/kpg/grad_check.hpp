#pragma once

#include <functional>
#include <span>
#include <vector>

namespace kpg {

// Loss callback used by grad_check: returns the scalar loss at `params` and,
// when `grad` is non-empty, writes the analytic gradient into it.
using DifferentiableFn = std::function<double(std::span<const double> params, std::span<double> grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double floor = 0.0;  // denominator floor that was applied
};

struct GradCheckOptions {
  double epsilon = 1e-4;
  // Per-coordinate error is |a − fd| / max(|a|, |fd|, floor) with
  // floor = max(absolute_floor, relative_floor · max_i |a_i|). The relative
  // part keeps coordinates whose true gradient is zero from being judged by
  // the roundoff noise of the difference quotient alone.
  double absolute_floor = 1e-8;
  double relative_floor = 0.0;
  std::vector<std::size_t> coordinates;  // all when empty
};

// Compares the analytic gradient against a fourth-order central difference
//   (−f(θ+2ε) + 8f(θ+ε) − 8f(θ−ε) + f(θ−2ε)) / 12ε
// coordinate by coordinate.
GradCheckResult grad_check(const DifferentiableFn& fn, std::vector<double> params, const GradCheckOptions& options = {});

// Same, with an externally supplied analytic gradient (e.g. one computed in
// 32-bit) compared against differences of a 64-bit function.
GradCheckResult grad_check_against(const std::function<double(std::span<const double>)>& fn,
                                   std::vector<double> params, std::span<const double> analytic,
                                   const GradCheckOptions& options = {});

}  // namespace kpg
