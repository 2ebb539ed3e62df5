#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "compslu/tensor.hpp"

namespace compslu {

enum class ScheduleKind { InverseSqrt, Exponential };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

struct OptimizerConfig {
  double peak_lr = 2e-3;
  std::size_t warmup_steps = 100;
  ScheduleKind schedule = ScheduleKind::InverseSqrt;
  double decay = 0.999;  // per-step factor after warmup, exponential schedule only
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 1e-6;
  double clip_norm = 5.0;
};

/// Learning rate at 1-based `step`: linear warmup to the peak, then either
/// peak * sqrt(warmup / step) or peak * decay^(step - warmup).
double learning_rate(const OptimizerConfig& config, std::size_t step);

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, OptimizerConfig config);

  /// Clips, applies one update, and returns the pre-clip gradient norm.
  double step();
  void zero_grad();
  std::size_t steps() const { return step_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace compslu
