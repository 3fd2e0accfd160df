#pragma once

#include <functional>

namespace dvae {

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
};

/// Adaptive sinh-sinh (double-exponential) quadrature over the whole real line. Throws NumericError when the
/// estimated relative error stays above `tolerance`.
QuadratureResult integrate_real_line(const std::function<double(double)>& f, double tolerance = 1e-8);

}  // namespace dvae
