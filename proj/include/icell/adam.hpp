#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "icell/tensor.hpp"

namespace icell {

template <typename T>
struct AdamParams {
  T lr = static_cast<T>(2e-4);
  T beta1 = static_cast<T>(0.5);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
};

// One Adam update on a flat tensor. Pure in (theta, grad, m, v, t); the
// caller owns the moment state.
template <typename T>
void adam_update(Tensor<T>& theta, const Tensor<T>& grad, Tensor<T>& m,
                 Tensor<T>& v, std::int64_t t, const AdamParams<T>& p) {
  check_shape(theta.numel() == grad.numel() && theta.numel() == m.numel() &&
                  theta.numel() == v.numel(),
              "adam_update: size mismatch");
  check_value(t >= 1, "adam_update: step index must be >= 1");
  const double c1 = 1.0 - std::pow(static_cast<double>(p.beta1), static_cast<double>(t));
  const double c2 = 1.0 - std::pow(static_cast<double>(p.beta2), static_cast<double>(t));
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    const double g = grad[i];
    const double mi = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    const double vi = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    theta[i] -= static_cast<T>(p.lr * (mi / c1) / (std::sqrt(vi / c2) + p.eps));
  }
}

// Optimizer state for one network component (one moment pair per parameter
// tensor, shared step counter).
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamParams<T> params) : params_(params) {}

  void bind(const std::vector<Tensor<T>*>& theta) {
    m_.clear();
    v_.clear();
    for (auto* p : theta) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
    t_ = 0;
  }

  void step(const std::vector<Tensor<T>*>& theta,
            const std::vector<Tensor<T>*>& grads) {
    check_shape(theta.size() == grads.size() && theta.size() == m_.size(),
                "Adam::step: parameter list mismatch");
    ++t_;
    for (std::size_t i = 0; i < theta.size(); ++i)
      adam_update(*theta[i], *grads[i], m_[i], v_[i], t_, params_);
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const AdamParams<T>& hyper() const { return params_; }

  std::vector<Tensor<T>>& moments1() { return m_; }
  std::vector<Tensor<T>>& moments2() { return v_; }

 private:
  AdamParams<T> params_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace icell
