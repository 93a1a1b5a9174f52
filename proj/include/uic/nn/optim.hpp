#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uic/error.hpp"
#include "uic/nn/tape.hpp"

namespace uic::nn {

struct AdamWConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  long warmup_steps = 0;
};

/// Linear warmup from 0 to the target rate, then constant.
inline double warmup_lr(double target, long step, long warmup) {
  if (warmup <= 0) return target;
  return target * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
}

inline double global_grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const auto* p : params)
    if (p->trainable) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

/// Scales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double n = global_grad_norm(params);
  if (!std::isfinite(n)) throw DivergenceError("non-finite gradient norm");
  if (max_norm > 0.0 && n > max_norm) {
    const double s = max_norm / (n + 1e-6);
    for (auto* p : params) p->grad *= s;
  }
  return n;
}

/// Adam with decoupled weight decay on parameters flagged `decay`.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    const double lr = warmup_lr(cfg_.lr, steps_, cfg_.warmup_steps);
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable) continue;
      if (p->decay) p->value *= (1.0 - lr * cfg_.weight_decay);
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p->grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
      p->value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Parameter*>& params() const { return params_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<Matrix> m_, v_;
  long steps_ = 0;
};

}  // namespace uic::nn
