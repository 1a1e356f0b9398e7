#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxmim/tape.hpp"

namespace voxmim {

// Ordered parameter collection. Registration order fixes the optimizer
// update order and the checkpoint layout.
template <typename T>
class ParamRegistry {
 public:
  void add(Param<T>& p, std::string name) {
    p.name = std::move(name);
    params_.push_back(&p);
  }
  void merge(const ParamRegistry<T>& other) {
    for (auto* p : other.params_) params_.push_back(p);
  }
  const std::vector<Param<T>*>& list() const { return params_; }
  size_t size() const { return params_.size(); }
  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }
  int64_t total_elements() const {
    int64_t n = 0;
    for (auto* p : params_) n += static_cast<int64_t>(p->size());
    return n;
  }

 private:
  std::vector<Param<T>*> params_;
};

// warmup ramp then cosine decay to zero
inline double cosine_warmup_lr(int64_t step, int64_t warmup_steps, int64_t total_steps,
                               double base_lr) {
  if (step < 0) step = 0;
  if (step > total_steps) step = total_steps;
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Decoupled-weight-decay Adam.
template <typename T>
class AdamW {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
  };

  AdamW(std::vector<Param<T>*> params, Config cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.emplace_back(p->size(), T(0));
      v_.emplace_back(p->size(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Param<T>& p = *params_[pi];
      if (p.grad.size() != p.value.size())
        throw std::runtime_error("adamw: missing gradient for parameter '" + p.name + "'");
      T* m = m_[pi].data();
      T* v = v_[pi].data();
      const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
      const T one_m_b1 = T(1) - b1, one_m_b2 = T(1) - b2;
      const T eps = static_cast<T>(cfg_.eps);
      const T wd = static_cast<T>(cfg_.weight_decay);
      const T lrT = static_cast<T>(lr);
      const T ib1 = static_cast<T>(1.0 / bc1), ib2 = static_cast<T>(1.0 / bc2);
      for (size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad[i];
        m[i] = b1 * m[i] + one_m_b1 * g;
        v[i] = b2 * v[i] + one_m_b2 * g * g;
        const T mhat = m[i] * ib1;
        const T vhat = v[i] * ib2;
        p.value[i] -= lrT * (mhat / (std::sqrt(vhat) + eps) + wd * p.value[i]);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  int64_t step_count() const { return t_; }

 private:
  std::vector<Param<T>*> params_;
  Config cfg_;
  std::vector<std::vector<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace voxmim
