#pragma once

#include <cstdint>

#include "seqforge/plugins.hpp"

namespace seqforge {

// theta <- theta - lr * g
class SgdOptimizer : public OptimizerBase {
 public:
  void apply(std::span<float> params, std::span<const float> grads, double lr) override;
  int64_t step_count() const override { return t_; }
  void set_step_count(int64_t t) override { t_ = t; }
  std::vector<std::pair<std::string, std::vector<float>>> state_blobs() const override;
  void load_state_blobs(
      const std::vector<std::pair<std::string, std::vector<float>>>& blobs) override;

 private:
  int64_t t_ = 0;
};

// standard Adam recurrence with bias correction; moments in FP32
class AdamOptimizer : public OptimizerBase {
 public:
  AdamOptimizer(int64_t nparams, double beta1, double beta2, double eps);
  void apply(std::span<float> params, std::span<const float> grads, double lr) override;
  int64_t step_count() const override { return t_; }
  void set_step_count(int64_t t) override { t_ = t; }
  std::vector<std::pair<std::string, std::vector<float>>> state_blobs() const override;
  void load_state_blobs(
      const std::vector<std::pair<std::string, std::vector<float>>>& blobs) override;

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<float> m_, v_;
};

class FixedSchedule : public SchedulerBase {
 public:
  explicit FixedSchedule(double base_lr);
  double lr(int64_t step) const override;

 private:
  double base_lr_;
};

// linear ramp warmup_init_lr -> base_lr over `warmup` steps, then
// base_lr * sqrt(warmup/step); warmup=0 starts the decay branch at
// step 1 (treated as warmup=1 so the boundary value is base_lr)
class InverseSqrtSchedule : public SchedulerBase {
 public:
  InverseSqrtSchedule(double base_lr, int64_t warmup, double warmup_init_lr);
  double lr(int64_t step) const override;

 private:
  double base_lr_, warmup_init_lr_;
  int64_t warmup_;
};

// lr = eta_min + 0.5*(base-eta_min)*(1+cos(pi*t_cur/T_i)) with cycle
// lengths T_i = period * t_mult^i; pure function of the global step
class CosineRestartSchedule : public SchedulerBase {
 public:
  CosineRestartSchedule(double base_lr, double eta_min, int64_t period, double t_mult);
  double lr(int64_t step) const override;

 private:
  double base_lr_, eta_min_, t_mult_;
  int64_t period_;
};

}  // namespace seqforge
