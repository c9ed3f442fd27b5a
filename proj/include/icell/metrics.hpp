#pragma once

// Evaluation metrics: multiclass confusion matrix, accuracy, latent
// statistics, and mask-conditioned mass fractions.

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "icell/tensor.hpp"

namespace icell {

// K x K counts; rows are true labels, columns predicted (both 1-based at the
// interface).
struct ConfusionMatrix {
  int k = 0;
  std::vector<long long> counts;  // row-major k*k

  explicit ConfusionMatrix(int k_) : k(k_) {
    check_value(k_ > 0, "ConfusionMatrix: k must be positive");
    counts.assign(static_cast<std::size_t>(k) * k, 0);
  }

  long long& at(int t, int p) {
    return counts[static_cast<std::size_t>(t) * k + p];
  }
  long long at(int t, int p) const {
    return counts[static_cast<std::size_t>(t) * k + p];
  }

  void add(int true_label, int predicted_label) {
    check_value(true_label >= 1 && true_label <= k &&
                    predicted_label >= 1 && predicted_label <= k,
                "ConfusionMatrix: label outside {1..K}");
    ++at(true_label - 1, predicted_label - 1);
  }

  long long total() const {
    long long s = 0;
    for (long long c : counts) s += c;
    return s;
  }

  std::vector<long long> row_sums() const {
    std::vector<long long> out(static_cast<std::size_t>(k), 0);
    for (int t = 0; t < k; ++t)
      for (int p = 0; p < k; ++p) out[static_cast<std::size_t>(t)] += at(t, p);
    return out;
  }

  double accuracy() const {
    const long long n = total();
    check_value(n > 0, "ConfusionMatrix: empty");
    long long diag = 0;
    for (int i = 0; i < k; ++i) diag += at(i, i);
    return static_cast<double>(diag) / static_cast<double>(n);
  }

  // CSV: header row of predicted-label names, one row per true label.
  std::string to_csv(const std::vector<std::string>& names = {}) const {
    std::ostringstream os;
    auto name = [&](int i) {
      return i < static_cast<int>(names.size())
                 ? names[static_cast<std::size_t>(i)]
                 : "class_" + std::to_string(i + 1);
    };
    os << "true\\pred";
    for (int p = 0; p < k; ++p) os << "," << name(p);
    os << "\n";
    for (int t = 0; t < k; ++t) {
      os << name(t);
      for (int p = 0; p < k; ++p) os << "," << at(t, p);
      os << "\n";
    }
    return os.str();
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth,
                                 const std::vector<int>& predicted, int k) {
  check_shape(truth.size() == predicted.size(),
              "confusion: label count mismatch");
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < truth.size(); ++i)
    m.add(truth[i], predicted[i]);
  return m;
}

inline double accuracy(const std::vector<int>& truth,
                       const std::vector<int>& predicted) {
  check_shape(truth.size() == predicted.size(),
              "accuracy: label count mismatch");
  check_value(!truth.empty(), "accuracy: empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == predicted[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// Per-dimension mean and variance of an (N, D) embedding matrix
// (population variance; used to check the adversarial prior fit).
struct LatentStats {
  std::vector<double> mean;
  std::vector<double> var;

  double max_abs_mean() const {
    double m = 0;
    for (double v : mean) m = std::max(m, std::abs(v));
    return m;
  }
  double min_var() const {
    double m = var.empty() ? 0 : var[0];
    for (double v : var) m = std::min(m, v);
    return m;
  }
  double max_var() const {
    double m = var.empty() ? 0 : var[0];
    for (double v : var) m = std::max(m, v);
    return m;
  }
};

template <typename T>
LatentStats latent_stats(const Tensor<T>& z) {
  check_shape(z.rank() == 2, "latent_stats: expected (N, D)");
  const int n = z.dim(0), d = z.dim(1);
  check_value(n > 0, "latent_stats: empty");
  LatentStats s;
  s.mean.assign(static_cast<std::size_t>(d), 0.0);
  s.var.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      s.mean[static_cast<std::size_t>(j)] += static_cast<double>(z.at(i, j));
  for (auto& m : s.mean) m /= n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double dev =
          static_cast<double>(z.at(i, j)) - s.mean[static_cast<std::size_t>(j)];
      s.var[static_cast<std::size_t>(j)] += dev * dev;
    }
  for (auto& v : s.var) v /= n;
  return s;
}

// Fraction of one channel's intensity mass lying where a mask channel is
// positive. Both channels are (S, S) planes of the same image.
template <typename T>
double mass_fraction_in_mask(const Tensor<T>& pixels, int channel,
                             int mask_channel) {
  check_shape(pixels.rank() == 3, "mass_fraction_in_mask: expected (C, H, W)");
  const int C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
  check_value(channel >= 0 && channel < C && mask_channel >= 0 &&
                  mask_channel < C,
              "mass_fraction_in_mask: channel out of range");
  double total = 0, inside = 0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const double v = pixels[(static_cast<std::size_t>(channel) * H + h) * W + w];
      total += v;
      if (pixels[(static_cast<std::size_t>(mask_channel) * H + h) * W + w] > 0)
        inside += v;
    }
  if (total <= 0) return 0.0;
  return inside / total;
}

}  // namespace icell
