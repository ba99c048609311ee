#include "toa/grad_check.hpp"

#include <cmath>
#include <string>

namespace toa {

GradCheckReport grad_check(const ScalarFunction& f, const Matrix& point,
                           const Matrix& analytic_grad, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  require_same_shape(point, analytic_grad, "grad_check");

  GradCheckReport report;
  report.step = step;
  Matrix x = point;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double saved = x(r, c);
      x(r, c) = saved + step;
      const double up = f(x);
      x(r, c) = saved - step;
      const double down = f(x);
      x(r, c) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite function value at (" + std::to_string(r) +
                           ", " + std::to_string(c) + ")");
      }
      const double fd = (up - down) / (2.0 * step);
      const double an = analytic_grad(r, c);
      const double err = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_row = r;
        report.worst_col = c;
      }
    }
  }
  return report;
}

}  // namespace toa
