#include "props/optim.hpp"

#include <cmath>

namespace props {

WarmupSchedule::WarmupSchedule(double peak_lr, double warmup_ratio, std::size_t total_steps)
    : peak_(peak_lr),
      warmup_(static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)))) {}

double WarmupSchedule::rate(std::size_t step) const {
  if (step < warmup_) {
    return peak_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
  }
  return peak_;
}

Adam::Adam(ParameterMap params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& [name, t] : params_) {
    m_.emplace(name, Matrix::Zero(t.rows(), t.cols()));
    v_.emplace(name, Matrix::Zero(t.rows(), t.cols()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    const Matrix g = t.grad();
    Matrix& m = m_.at(name);
    Matrix& v = v_.at(name);
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    t.mutable_value().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.eps);
  }
}

}  // namespace props
