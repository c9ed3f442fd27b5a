#pragma once

// Central finite-difference oracle for gradient checks. Kept independent of
// the analytic backward path: it only re-runs forward evaluations.

#include <cmath>
#include <functional>
#include <vector>

#include "icell/rng.hpp"
#include "icell/tensor.hpp"

namespace icell::testing {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

// d loss / d tensor[idx] by central differences.
template <typename T>
double numeric_grad(Tensor<T>& t, std::size_t idx,
                    const std::function<double()>& loss, double h = 1e-5) {
  const T orig = t[idx];
  t[idx] = orig + static_cast<T>(h);
  const double lp = loss();
  t[idx] = orig - static_cast<T>(h);
  const double lm = loss();
  t[idx] = orig;
  return (lp - lm) / (2.0 * h);
}

// Indices to probe: all entries for small tensors, a deterministic sample
// otherwise (full FD over fc-1024 stacks would dwarf the suite budget).
inline std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_n,
                                              std::uint64_t seed) {
  std::vector<std::size_t> idx;
  if (n <= max_n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  RandomStream rng(seed);
  for (std::size_t i = 0; i < max_n; ++i) idx.push_back(rng.below(n));
  return idx;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares analytic against numeric for a sampled set of entries of t.
template <typename T>
GradCheckResult check_grad(Tensor<T>& t, const Tensor<T>& analytic,
                           const std::function<double()>& loss,
                           std::size_t max_entries = 64, double h = 1e-5,
                           std::uint64_t seed = 99) {
  GradCheckResult r;
  for (std::size_t i : probe_indices(t.numel(), max_entries, seed)) {
    const double num = numeric_grad(t, i, loss, h);
    r.max_rel_err = std::max(r.max_rel_err,
                             rel_err(static_cast<double>(analytic[i]), num));
    ++r.checked;
  }
  return r;
}

template <typename T>
void fill_random(Tensor<T>& t, RandomStream& rng, double lo = -1.0,
                 double hi = 1.0) {
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace icell::testing
