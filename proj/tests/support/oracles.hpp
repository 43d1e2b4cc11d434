#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "qscnet/autograd/var.hpp"

namespace oracle {

/// Direct O(n^2) DFT of a real sequence, bins 0..n/2.
inline std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

/// Periodic Hann, written out from its definition.
inline double hann(std::size_t m, std::size_t n) {
  return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n));
}

/// Kolmogorov-Smirnov statistic of samples against U(lo, hi) and its
/// asymptotic p-value.
inline std::pair<double, double> ks_uniform(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = std::clamp((xs[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
  }
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0;
  for (int j = 1; j <= 100; ++j)
    p += 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
  return {d, std::clamp(p, 0.0, 1.0)};
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t within = 0;
  double worst = 0;
  double fraction() const { return checked ? static_cast<double>(within) / static_cast<double>(checked) : 1.0; }
};

/// Compares analytic gradients of `loss` (built afresh on each call) with
/// central differences for every scalar of every Var in `params`.
/// Relative error uses max(|a|, |n|, floor) as denominator.
inline GradCheck check_gradients(const std::function<qscnet::ag::Var<double>()>& loss,
                                 std::vector<qscnet::ag::Var<double>> params, double tol = 1e-3,
                                 double step = 1e-6, double floor = 1e-7) {
  for (auto& p : params) p.zero_grad();
  qscnet::ag::backward(loss());
  GradCheck r;
  for (auto& p : params) {
    const auto analytic = p.grad().empty() ? qscnet::Tensor<double>(p.shape()) : p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& v = p.mutable_value()[i];
      const double saved = v;
      double up, down;
      {
        qscnet::ag::NoGradGuard ng;
        v = saved + step;
        up = loss().value()[0];
        v = saved - step;
        down = loss().value()[0];
      }
      v = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (err <= tol) ++r.within;
      r.worst = std::max(r.worst, err);
    }
  }
  return r;
}

}  // namespace oracle
