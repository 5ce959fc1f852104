#pragma once

// Central finite-difference verification of backward rules. The numeric
// gradient is an oracle independent of the graph: it only re-evaluates the
// forward function. Checks should run at 64-bit; difference quotients are
// meaningless at float precision.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "msnc/ops.hpp"
#include "msnc/rng.hpp"
#include "msnc/tensor.hpp"

namespace msnc {

struct FdIssue {
  std::string tensor;
  int64_t coord = 0;
  double analytic = 0;
  double numeric = 0;
  double rel = 0;
};

struct FdReport {
  double max_rel = 0;
  int64_t coords_checked = 0;
  FdIssue worst;

  bool pass(double tol) const { return max_rel < tol; }
};

// Verifies d loss / d leaf for every named leaf against central differences.
// loss_fn must rebuild the graph from the current leaf values and be
// deterministic (fix all noise and shift draws before calling).
// max_coords_per_tensor < 0 checks every coordinate; otherwise a seed-derived
// subset is probed.
template <typename T>
FdReport finite_diff_check_many(const std::function<Tensor<T>()>& loss_fn,
                                const std::vector<std::pair<std::string, Tensor<T>>>& leaves,
                                double tol, double h = 1e-5,
                                int64_t max_coords_per_tensor = -1, uint64_t seed = 0) {
  (void)tol;
  for (auto& [name, leaf] : leaves) {
    (void)name;
    const_cast<Tensor<T>&>(leaf).zero_grad();
  }
  Tensor<T> loss = loss_fn();
  if (loss.numel() != 1) throw UsageError("finite_diff_check: loss must be scalar");
  backward(loss);

  FdReport report;
  Rng pick(seed, 0x9d7c'5e2fULL);
  for (auto& [name, leaf_const] : leaves) {
    auto& leaf = const_cast<Tensor<T>&>(leaf_const);
    const int64_t n = leaf.numel();
    std::vector<T> analytic(n, T(0));
    if (leaf.has_grad()) {
      auto g = leaf.grad();
      analytic.assign(g.begin(), g.end());
    }
    std::vector<int64_t> coords;
    if (max_coords_per_tensor < 0 || n <= max_coords_per_tensor) {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::vector<bool> taken(n, false);
      while (static_cast<int64_t>(coords.size()) < max_coords_per_tensor) {
        int64_t c = pick.below(static_cast<uint32_t>(n));
        if (!taken[c]) {
          taken[c] = true;
          coords.push_back(c);
        }
      }
    }
    auto values = leaf.mutable_data();
    for (int64_t c : coords) {
      const T saved = values[c];
      double lp, lm;
      {
        NoGradGuard ng;
        values[c] = saved + static_cast<T>(h);
        lp = static_cast<double>(loss_fn().item());
        values[c] = saved - static_cast<T>(h);
        lm = static_cast<double>(loss_fn().item());
        values[c] = saved;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = static_cast<double>(analytic[c]);
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = {name, c, a, numeric, rel};
      }
    }
  }
  return report;
}

// Single-tensor form: checks d f(x) / d x.
template <typename T>
FdReport finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                           double tol, double h = 1e-5, int64_t max_coords = -1,
                           uint64_t seed = 0) {
  x.set_requires_grad(true);
  return finite_diff_check_many<T>([&] { return f(x); }, {{"x", x}}, tol, h, max_coords, seed);
}

}  // namespace msnc
