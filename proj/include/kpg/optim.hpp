#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "kpg/tensor.hpp"

namespace kpg {

template <typename T>
struct OptimState {
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t t = 0;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// One AdamW update. Weight decay is decoupled: θ ← θ − lr·wd·θ before the
// bias-corrected moment step. A fresh (empty) state is sized on first use.
template <typename T>
void adamw_step(Tensor<T>& param, const Tensor<T>& grad, OptimState<T>& state, const AdamWConfig& cfg);

enum class ScheduleKind { linear, polynomial };

struct ScheduleSpec {
  double base_lr = 1e-4;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  ScheduleKind kind = ScheduleKind::linear;
  double end_lr = 0.0;
  double power = 2.0;  // polynomial decay only

  void validate() const;
};

// Linear warmup 0 → base_lr, then linear or polynomial decay to end_lr at
// total_steps. Steps past the end clamp to end_lr.
double lr_schedule(std::int64_t step, const ScheduleSpec& spec);

ScheduleKind parse_schedule_kind(const std::string& name);

}  // namespace kpg
