#pragma once

// Independent reference computations used by the tests. Nothing here calls into the
// library's numerical kernels beyond plain value access.

#include <cmath>
#include <limits>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

inline double normal_pdf(double x, double mean, double var) {
  const double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

inline double diag_normal_pdf(const std::vector<double>& z, const std::vector<double>& mean, const std::vector<double>& var) {
  double p = 1.0;
  for (std::size_t d = 0; d < z.size(); ++d) p *= normal_pdf(z[d], mean[d], var[d]);
  return p;
}

inline double student_t_pdf(double x, double nu) {
  return std::tgamma((nu + 1) / 2) / (std::sqrt(nu * std::numbers::pi) * std::tgamma(nu / 2)) *
         std::pow(1.0 + x * x / nu, -(nu + 1) / 2);
}

/// Composite trapezoid rule on [a, b] with n intervals.
inline double trapezoid(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  const double h = (b - a) / double(n);
  double acc = 0.5 * (f(a) + f(b));
  for (std::size_t i = 1; i < n; ++i) acc += f(a + h * double(i));
  return acc * h;
}

inline double trapezoid2(const std::function<double(double, double)>& f, double a, double b, std::size_t n) {
  const double h = (b - a) / double(n);
  double acc = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double wi = (i == 0 || i == n) ? 0.5 : 1.0;
    for (std::size_t j = 0; j <= n; ++j) {
      const double wj = (j == 0 || j == n) ? 0.5 : 1.0;
      acc += wi * wj * f(a + h * double(i), a + h * double(j));
    }
  }
  return acc * h * h;
}

/// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 std::size_t i, double step = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + step;
  const double up = f(x);
  x[i] = x0 - step;
  const double down = f(x);
  return (up - down) / (2.0 * step);
}

struct Derivative {
  double value;
  double error;  // Ridders' own estimate
};

/// Ridders' polynomial extrapolation of central differences over shrinking steps; returns the
/// tableau entry with the smallest error estimate.
inline Derivative ridders_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 std::size_t i, double step = 1e-2) {
  constexpr int kSize = 12;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink;
  const double x0 = x[i];
  auto central = [&](double h) {
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
  };
  const double scale = std::abs(f(x));
  double a[kSize][kSize];
  double h = step, best = central(h), err = 1e300, best_h = h;
  a[0][0] = best;
  for (int r = 1; r < kSize; ++r) {
    h /= kShrink;
    a[0][r] = central(h);
    double fac = kShrink2;
    for (int c = 1; c <= r; ++c) {
      a[c][r] = (a[c - 1][r] * fac - a[c - 1][r - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(a[c][r] - a[c - 1][r]), std::abs(a[c][r] - a[c - 1][r - 1]));
      if (e <= err) {
        err = e;
        best = a[c][r];
        best_h = h;
      }
    }
    if (std::abs(a[r][r] - a[r - 1][r - 1]) >= 2.0 * err) break;
  }
  // The tableau cannot see cancellation in f(x+h) - f(x-h), so add its floor.
  return {best, err + std::numeric_limits<double>::epsilon() * scale / best_h};
}

/// Ridders from several starting steps, keeping the estimate it trusts most: wide steps
/// resolve tiny gradients, narrow ones stay clear of nearby kinks.
inline double robust_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                std::size_t i) {
  Derivative best{0.0, std::numeric_limits<double>::infinity()};
  for (double step : {1e-2, 1e-3, 1e-4}) {
    const Derivative d = ridders_difference(f, x, i, step);
    if (d.error < best.error) best = d;
  }
  return best.value;
}

inline double cauchy_kernel(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& scales) {
  double k = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d)
    for (double s : scales) k += s / (s + (a[d] - b[d]) * (a[d] - b[d]));
  return k;
}

/// Brute-force V-statistic MMD^2 as three explicit double sums.
inline double mmd_double_sum(const std::vector<std::vector<double>>& z, const std::vector<std::vector<double>>& w,
                             const std::vector<double>& scales) {
  double zz = 0, ww = 0, zw = 0;
  for (const auto& a : z)
    for (const auto& b : z) zz += cauchy_kernel(a, b, scales);
  for (const auto& a : w)
    for (const auto& b : w) ww += cauchy_kernel(a, b, scales);
  for (const auto& a : z)
    for (const auto& b : w) zw += cauchy_kernel(a, b, scales);
  const double m = double(z.size()), n = double(w.size());
  return zz / (m * m) + ww / (n * n) - 2.0 * zw / (m * n);
}

inline double hoyer(const std::vector<double>& y) {
  double l1 = 0, l2 = 0;
  for (double v : y) {
    l1 += std::fabs(v);
    l2 += v * v;
  }
  const double sd = std::sqrt(double(y.size()));
  return (sd - l1 / std::sqrt(l2)) / (sd - 1.0);
}

/// Bias-corrected Adam at step t for a single scalar, written out longhand.
inline double adam_first_update(double g, double lr, double b1, double b2, double eps) {
  const double m = (1 - b1) * g, v = (1 - b2) * g * g;
  const double mhat = m / (1 - b1), vhat = v / (1 - b2);
  return -lr * mhat / (std::sqrt(vhat) + eps);
}

}  // namespace oracle
