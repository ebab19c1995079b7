#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "voxelbench/rng.hpp"
#include "voxelbench/tensor.hpp"

namespace vbtest {

// Central finite-difference oracle for d(loss)/d(x[i]); eval() recomputes the
// loss with the current tensor contents.
inline double fd_derivative(voxelbench::Tensor<double>& x, std::int64_t i,
                            const std::function<double()>& eval, double h = 1e-4) {
  const double orig = x[i];
  x[i] = orig + h;
  const double lp = eval();
  x[i] = orig - h;
  const double lm = eval();
  x[i] = orig;
  return (lp - lm) / (2.0 * h);
}

// Max relative error between analytic and finite-difference gradients over
// n random coordinates of x.
inline double max_grad_rel_error(voxelbench::Tensor<double>& x,
                                 const voxelbench::Tensor<double>& analytic,
                                 const std::function<double()>& eval, int n_coords,
                                 voxelbench::Rng& rng, double h = 1e-4) {
  double worst = 0.0;
  for (int t = 0; t < n_coords; ++t) {
    const std::int64_t i =
        static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(x.size())));
    const double fd = fd_derivative(x, i, eval, h);
    const double an = analytic[i];
    const double scale = std::max({std::fabs(fd), std::fabs(an), 1e-6});
    worst = std::max(worst, std::fabs(fd - an) / scale);
  }
  return worst;
}

// FD check for piecewise-smooth losses (ReLU kinks, pool argmax switches).
// eval() returns the loss plus a hash of the active branch pattern; probe
// points whose +/-h evaluations land on different branches are resampled,
// since central differences are meaningless across the kink.
// scale_floor turns the relative criterion into an absolute one for
// near-zero gradients, where the FD quotient is dominated by rounding noise
// in the loss sum.
inline double max_grad_rel_error_masked(
    voxelbench::Tensor<double>& x, const voxelbench::Tensor<double>& analytic,
    const std::function<std::pair<double, std::uint64_t>()>& eval, int n_coords,
    voxelbench::Rng& rng, double h = 1e-5, double scale_floor = 1e-4) {
  double worst = 0.0;
  int accepted = 0;
  int attempts = 0;
  const int max_attempts = n_coords * 20;
  while (accepted < n_coords && attempts < max_attempts) {
    ++attempts;
    const std::int64_t i =
        static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(x.size())));
    const double orig = x[i];
    x[i] = orig + h;
    const auto [lp, pat_p] = eval();
    x[i] = orig - h;
    const auto [lm, pat_m] = eval();
    x[i] = orig;
    if (pat_p != pat_m) continue;  // kink inside the probe interval
    const double fd = (lp - lm) / (2.0 * h);
    const double an = analytic[i];
    const double scale = std::max({std::fabs(fd), std::fabs(an), scale_floor});
    worst = std::max(worst, std::fabs(fd - an) / scale);
    ++accepted;
  }
  return accepted == n_coords ? worst : 1.0;  // fail loudly if probes ran out
}

template <typename S>
void fill_normal(voxelbench::Tensor<S>& t, voxelbench::Rng& rng, double stddev = 1.0) {
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<S>(rng.normal(0.0, stddev));
  }
}

// Fixed random linear functional: loss = sum(w .* out). Its gradient w.r.t.
// out is w itself, which seeds the backward pass under test.
inline voxelbench::Tensor<double> random_seed_like(const std::vector<std::int64_t>& shape,
                                                   voxelbench::Rng& rng) {
  voxelbench::Tensor<double> w(shape);
  fill_normal(w, rng);
  return w;
}

inline double dot_loss(const voxelbench::Tensor<double>& out,
                       const voxelbench::Tensor<double>& w) {
  return (out.array().template cast<double>() * w.array().template cast<double>()).sum();
}

}  // namespace vbtest
