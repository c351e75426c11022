#pragma once

#include "props/nn.hpp"

#include <cstddef>

namespace props {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Linear warmup over ceil(warmup_ratio * total_steps) steps, then constant.
class WarmupSchedule {
 public:
  WarmupSchedule(double peak_lr, double warmup_ratio, std::size_t total_steps);
  std::size_t warmup_steps() const { return warmup_; }
  double rate(std::size_t step) const;  // step counts from 0

 private:
  double peak_;
  std::size_t warmup_;
};

/// Adam over a fixed parameter set. Parameters without an accumulated
/// gradient are left untouched.
class Adam {
 public:
  Adam(ParameterMap params, AdamConfig config);
  void step(double lr);
  void zero_grad() { zero_grads(params_); }
  std::size_t steps_taken() const { return t_; }
  const ParameterMap& parameters() const { return params_; }

 private:
  ParameterMap params_;
  AdamConfig config_;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
  std::size_t t_ = 0;
};

}  // namespace props
