#include "compslu/optim.hpp"

#include <algorithm>
#include <cmath>

#include "compslu/errors.hpp"

namespace compslu {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "inv_sqrt" || name == "inverse_sqrt") return ScheduleKind::InverseSqrt;
  if (name == "exp" || name == "exponential") return ScheduleKind::Exponential;
  throw ConfigError("unknown learning-rate schedule: " + name);
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::InverseSqrt ? "inv_sqrt" : "exp";
}

double learning_rate(const OptimizerConfig& config, std::size_t step) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(std::max<std::size_t>(config.warmup_steps, 1));
  if (s <= w) return config.peak_lr * s / w;
  if (config.schedule == ScheduleKind::InverseSqrt) return config.peak_lr * std::sqrt(w / s);
  return config.peak_lr * std::pow(config.decay, s - w);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (auto& p : params)
      for (auto& g : p.mutable_grad()) g *= f;
  }
  return norm;
}

Adam::Adam(std::vector<Tensor> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.peak_lr <= 0.0) throw ConfigError("learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

double Adam::step() {
  const double norm = clip_grad_norm(params_, config_.clip_norm);
  ++step_;
  const double lr = learning_rate(config_, step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto data = params_[k].mutable_data();
    const auto grad = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i] + config_.weight_decay * data[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
  return norm;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace compslu
