#include "kpg/optim.hpp"

#include <cmath>

namespace kpg {

template <typename T>
void adamw_step(Tensor<T>& param, const Tensor<T>& grad, OptimState<T>& state, const AdamWConfig& cfg) {
  require(param.shape() == grad.shape(), "adamw_step: gradient shape " + shape_string(grad.shape()) +
                                             " does not match parameter " + shape_string(param.shape()));
  if (state.m.empty()) {
    state.m = Tensor<T>(param.shape());
    state.v = Tensor<T>(param.shape());
  }
  require(state.m.shape() == param.shape() && state.v.shape() == param.shape(), "adamw_step: state shape mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    param[i] -= T(cfg.lr * cfg.weight_decay) * param[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double m_hat = double(state.m[i]) / c1;
    const double v_hat = double(state.v[i]) / c2;
    param[i] -= T(cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

template void adamw_step(Tensor<float>&, const Tensor<float>&, OptimState<float>&, const AdamWConfig&);
template void adamw_step(Tensor<double>&, const Tensor<double>&, OptimState<double>&, const AdamWConfig&);

void ScheduleSpec::validate() const {
  require(base_lr > 0, "schedule: base_lr must be positive");
  require(warmup_steps >= 0 && warmup_steps <= total_steps, "schedule: need 0 <= warmup_steps <= total_steps");
}

double lr_schedule(std::int64_t step, const ScheduleSpec& spec) {
  spec.validate();
  if (step < 0) step = 0;
  if (step >= spec.total_steps) return spec.warmup_steps == spec.total_steps && step == spec.total_steps
                                           ? spec.base_lr
                                           : spec.end_lr;
  if (step < spec.warmup_steps) return spec.base_lr * double(step) / double(spec.warmup_steps);
  const double remaining = double(spec.total_steps - step) / double(spec.total_steps - spec.warmup_steps);
  const double shape = spec.kind == ScheduleKind::linear ? remaining : std::pow(remaining, spec.power);
  return spec.end_lr + (spec.base_lr - spec.end_lr) * shape;
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "polynomial") return ScheduleKind::polynomial;
  throw ContractError("unknown schedule kind '" + name + "' (expected linear or polynomial)");
}

}  // namespace kpg
