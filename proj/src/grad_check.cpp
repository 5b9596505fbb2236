#include "kpg/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "kpg/errors.hpp"

namespace kpg {

namespace {

double checked(double v) {
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check_against(const std::function<double(std::span<const double>)>& fn,
                                   std::vector<double> params, std::span<const double> analytic, const GradCheckOptions& options) {
  const double epsilon = options.epsilon;
  std::span<const std::size_t> coordinates = options.coordinates;
  require(epsilon >= 1e-6 && epsilon <= 1e-3, "grad_check: epsilon must lie in [1e-6, 1e-3]");
  require(analytic.size() == params.size(), "grad_check: gradient size mismatch");
  checked(fn(params));

  std::vector<std::size_t> all;
  if (coordinates.empty()) {
    all.resize(params.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coordinates = all;
  }

  double max_abs = 0.0;
  for (std::size_t i : coordinates) {
    require(i < params.size(), "grad_check: coordinate out of range");
    max_abs = std::max(max_abs, std::abs(analytic[i]));
  }
  const double floor = std::max(options.absolute_floor, options.relative_floor * max_abs);

  GradCheckResult result;
  result.floor = floor;
  for (std::size_t i : coordinates) {
    const double saved = params[i];
    auto at = [&](double offset) {
      params[i] = saved + offset;
      return checked(fn(params));
    };
    const double fp1 = at(epsilon), fm1 = at(-epsilon), fp2 = at(2 * epsilon), fm2 = at(-2 * epsilon);
    params[i] = saved;
    const double fd = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * epsilon);
    const double a = analytic[i];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
    if (rel > result.max_rel_error || (result.max_rel_error == 0.0 && i == coordinates.front())) {
      result = {rel, i, a, fd, floor};
    }
  }
  return result;
}

GradCheckResult grad_check(const DifferentiableFn& fn, std::vector<double> params, const GradCheckOptions& options) {
  std::vector<double> analytic(params.size(), 0.0);
  checked(fn(params, analytic));
  return grad_check_against([&](std::span<const double> p) { return fn(p, {}); }, std::move(params), analytic,
                            options);
}

}  // namespace kpg
