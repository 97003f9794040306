#include "seqforge/optim.hpp"

#include <cmath>

#include "seqforge/common.hpp"

namespace seqforge {

namespace {

void check_update(std::span<float> params, std::span<const float> grads) {
  if (params.size() != grads.size())
    throw ShapeError("optimizer: parameter/gradient length mismatch");
  for (float g : grads)
    if (!std::isfinite(g))
      throw DivergenceError("optimizer: non-finite gradient");
}

}  // namespace

void SgdOptimizer::apply(std::span<float> params, std::span<const float> grads,
                         double lr) {
  check_update(params, grads);
  for (size_t i = 0; i < params.size(); ++i)
    params[i] = static_cast<float>(params[i] - lr * grads[i]);
  ++t_;
}

std::vector<std::pair<std::string, std::vector<float>>> SgdOptimizer::state_blobs() const {
  return {};
}

void SgdOptimizer::load_state_blobs(
    const std::vector<std::pair<std::string, std::vector<float>>>& blobs) {
  if (!blobs.empty()) throw IntegrityError("sgd: unexpected optimizer state blobs");
}

AdamOptimizer::AdamOptimizer(int64_t nparams, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(static_cast<size_t>(nparams), 0.0f),
      v_(static_cast<size_t>(nparams), 0.0f) {
  if (nparams < 0) throw ConfigError("adam: negative parameter count");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("adam: betas must be in [0, 1)");
  if (eps <= 0) throw ConfigError("adam: eps must be positive");
}

void AdamOptimizer::apply(std::span<float> params, std::span<const float> grads,
                          double lr) {
  check_update(params, grads);
  if (params.size() != m_.size())
    throw ShapeError("adam: moment/parameter length mismatch");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    double m = beta1_ * m_[i] + (1.0 - beta1_) * g;
    double v = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    m_[i] = static_cast<float>(m);
    v_[i] = static_cast<float>(v);
    double mhat = static_cast<double>(m_[i]) / bc1;
    double vhat = static_cast<double>(v_[i]) / bc2;
    params[i] = static_cast<float>(params[i] - lr * mhat / (std::sqrt(vhat) + eps_));
  }
}

std::vector<std::pair<std::string, std::vector<float>>> AdamOptimizer::state_blobs() const {
  return {{"adam.m", m_}, {"adam.v", v_}};
}

void AdamOptimizer::load_state_blobs(
    const std::vector<std::pair<std::string, std::vector<float>>>& blobs) {
  bool got_m = false, got_v = false;
  for (const auto& [name, data] : blobs) {
    if (name == "adam.m") {
      if (data.size() != m_.size()) throw IntegrityError("adam: moment size mismatch");
      m_ = data;
      got_m = true;
    } else if (name == "adam.v") {
      if (data.size() != v_.size()) throw IntegrityError("adam: moment size mismatch");
      v_ = data;
      got_v = true;
    } else {
      throw IntegrityError("adam: unknown state blob '" + name + "'");
    }
  }
  if (!got_m || !got_v) throw IntegrityError("adam: missing moment blobs");
}

FixedSchedule::FixedSchedule(double base_lr) : base_lr_(base_lr) {
  if (base_lr <= 0) throw ConfigError("scheduler: base lr must be positive");
}

double FixedSchedule::lr(int64_t) const { return base_lr_; }

InverseSqrtSchedule::InverseSqrtSchedule(double base_lr, int64_t warmup,
                                         double warmup_init_lr)
    : base_lr_(base_lr), warmup_init_lr_(warmup_init_lr), warmup_(warmup) {
  if (base_lr <= 0) throw ConfigError("scheduler: base lr must be positive");
  if (warmup < 0) throw ConfigError("inverse_sqrt: warmup must be >= 0");
  if (warmup_init_lr < 0) throw ConfigError("inverse_sqrt: warmup_init_lr must be >= 0");
}

double InverseSqrtSchedule::lr(int64_t step) const {
  if (step < 1) throw BoundsError("scheduler: step must be >= 1");
  if (step <= warmup_)
    return warmup_init_lr_ +
           (base_lr_ - warmup_init_lr_) * static_cast<double>(step) /
               static_cast<double>(warmup_);
  double w = static_cast<double>(warmup_ > 0 ? warmup_ : 1);
  return base_lr_ * std::sqrt(w / static_cast<double>(step));
}

CosineRestartSchedule::CosineRestartSchedule(double base_lr, double eta_min,
                                             int64_t period, double t_mult)
    : base_lr_(base_lr), eta_min_(eta_min), t_mult_(t_mult), period_(period) {
  if (base_lr <= 0) throw ConfigError("scheduler: base lr must be positive");
  if (eta_min < 0 || eta_min > base_lr)
    throw ConfigError("cosine_restart: eta_min must be in [0, base_lr]");
  if (period < 1) throw ConfigError("cosine_restart: period must be >= 1");
  if (t_mult < 1) throw ConfigError("cosine_restart: t_mult must be >= 1");
}

double CosineRestartSchedule::lr(int64_t step) const {
  if (step < 1) throw BoundsError("scheduler: step must be >= 1");
  double t_cur = static_cast<double>(step - 1);
  double t_i = static_cast<double>(period_);
  while (t_cur >= t_i) {
    t_cur -= t_i;
    t_i *= t_mult_;
  }
  const double pi = 3.14159265358979323846;
  return eta_min_ + 0.5 * (base_lr_ - eta_min_) * (1.0 + std::cos(pi * t_cur / t_i));
}

}  // namespace seqforge
