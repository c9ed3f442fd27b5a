#pragma once

#include <cmath>
#include <vector>

#include "icell/tensor.hpp"

namespace icell {

// Binary adversary label convention: observed = 1, generated = 0.
namespace verdict {
inline constexpr double kObserved = 1.0;
inline constexpr double kGenerated = 0.0;
}  // namespace verdict

inline constexpr double kBceEps = 1e-7;

template <typename T>
struct Loss {
  T value = T(0);
  Tensor<T> grad;  // d value / d first argument
};

// Mean binary cross-entropy over all elements. Predictions are clamped to
// [eps, 1-eps] before the logs.
template <typename T>
Loss<T> bce(const Tensor<T>& pred, const Tensor<T>& target) {
  check_shape(pred.same_shape(target), "bce: shape mismatch " +
                                           pred.shape_str() + " vs " +
                                           target.shape_str());
  const std::size_t n = pred.numel();
  check_value(n > 0, "bce: empty input");
  Loss<T> out;
  out.grad = Tensor<T>(pred.shape());
  double acc = 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p = static_cast<double>(pred[i]);
    p = std::min(1.0 - kBceEps, std::max(kBceEps, p));
    const double u = static_cast<double>(target[i]);
    acc -= u * std::log(p) + (1.0 - u) * std::log(1.0 - p);
    out.grad[i] = static_cast<T>((p - u) / (p * (1.0 - p)) * inv_n);
  }
  out.value = static_cast<T>(acc * inv_n);
  return out;
}

// bce against a constant label (0 or 1 for adversary verdicts).
template <typename T>
Loss<T> bce_const(const Tensor<T>& pred, double label) {
  Tensor<T> target(pred.shape());
  target.fill(static_cast<T>(label));
  return bce(pred, target);
}

// Mean squared error, averaged over every element (batch included).
template <typename T>
Loss<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  check_shape(pred.same_shape(target), "mse: shape mismatch " +
                                           pred.shape_str() + " vs " +
                                           target.shape_str());
  const std::size_t n = pred.numel();
  check_value(n > 0, "mse: empty input");
  Loss<T> out;
  out.grad = Tensor<T>(pred.shape());
  double acc = 0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
    out.grad[i] = static_cast<T>(2.0 * d * inv_n);
  }
  out.value = static_cast<T>(acc * inv_n);
  return out;
}

// -log softmax(u)_y for one row of scores, y zero-based. Accepts raw logits
// or any real-valued score vector; shift invariance comes from the max
// subtraction.
template <typename T>
Loss<T> class_loss(const Tensor<T>& scores, const std::vector<int>& labels) {
  check_shape(scores.rank() == 2, "class_loss: expected (N,K) scores");
  const int n = scores.dim(0);
  const int k = scores.dim(1);
  check_shape(static_cast<int>(labels.size()) == n,
              "class_loss: label count mismatch");
  Loss<T> out;
  out.grad = Tensor<T>(scores.shape());
  double acc = 0;
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    check_value(y >= 0 && y < k, "class_loss: label index out of range");
    double mx = scores.at(i, 0);
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(scores.at(i, j)));
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(scores.at(i, j)) - mx);
    acc -= static_cast<double>(scores.at(i, y)) - mx - std::log(z);
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(scores.at(i, j)) - mx) / z;
      out.grad.at(i, j) = static_cast<T>((p - (j == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  out.value = static_cast<T>(acc * inv_n);
  return out;
}

template <typename T>
Loss<T> class_loss(const Tensor<T>& scores, int label) {
  return class_loss(scores, std::vector<int>(scores.dim(0), label));
}

// -log p_y for a row-stochastic probability matrix. Used for the class head
// of the conditional encoder, whose softmax is part of the network; the
// gradient here composed with the softmax backward reproduces the usual
// (softmax - onehot) logit gradient.
template <typename T>
Loss<T> nll_probs(const Tensor<T>& probs, const std::vector<int>& labels) {
  check_shape(probs.rank() == 2, "nll_probs: expected (N,K) probabilities");
  const int n = probs.dim(0);
  const int k = probs.dim(1);
  check_shape(static_cast<int>(labels.size()) == n,
              "nll_probs: label count mismatch");
  Loss<T> out;
  out.grad = Tensor<T>(probs.shape());
  double acc = 0;
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    check_value(y >= 0 && y < k, "nll_probs: label index out of range");
    double p = static_cast<double>(probs.at(i, y));
    p = std::max(p, kBceEps);
    acc -= std::log(p);
    out.grad.at(i, y) = static_cast<T>(-inv_n / p);
  }
  out.value = static_cast<T>(acc * inv_n);
  return out;
}

// Eq.-5-style discriminator objective: generated scored against 0, observed
// against 1. Gradients are returned separately per branch.
template <typename T>
struct DiscriminatorLoss {
  T value = T(0);
  Tensor<T> grad_gen;
  Tensor<T> grad_obs;
};

template <typename T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& v_gen,
                                        const Tensor<T>& v_obs) {
  auto lg = bce_const(v_gen, verdict::kGenerated);
  auto lo = bce_const(v_obs, verdict::kObserved);
  DiscriminatorLoss<T> out;
  out.value = lg.value + lo.value;
  out.grad_gen = std::move(lg.grad);
  out.grad_obs = std::move(lo.grad);
  return out;
}

}  // namespace icell
