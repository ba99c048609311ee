#pragma once

#include <cstddef>
#include <functional>

#include "toa/matrix.hpp"

namespace toa {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_row = 0;
  std::size_t worst_col = 0;
  double step = 0.0;
};

using ScalarFunction = std::function<double(const Matrix&)>;

// Compares analytic_grad against central differences of f at point.
// Per-coordinate error is |analytic - fd| / (|analytic| + |fd| + 1e-12).
GradCheckReport grad_check(const ScalarFunction& f, const Matrix& point,
                           const Matrix& analytic_grad, double step = 1e-5);

}  // namespace toa
