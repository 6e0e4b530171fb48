#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "asymcycle/layers.hpp"

namespace asymcycle {

/// Adam over a fixed list of parameters. Moments live here so the trainer can
/// serialize the full optimizer state for exact resume.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ParamTensor<T>*> params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->value.size(), T(0));
      v_[i].assign(params_[i]->value.size(), T(0));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i]->value;
      const auto& grad = params_[i]->grad;
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        m_[i][j] = static_cast<T>(beta1_ * m_[i][j] + (1.0 - beta1_) * g);
        v_[i][j] = static_cast<T>(beta2_ * v_[i][j] + (1.0 - beta2_) * g * g);
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        value[j] = static_cast<T>(value[j] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  double learning_rate() const { return lr_; }

  // state access for serialization
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<ParamTensor<T>*> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

}  // namespace asymcycle
