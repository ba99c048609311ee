#include "toa/linalg.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

namespace toa {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

ConstView view(const Matrix& m) {
  return ConstView(m.data(), static_cast<Eigen::Index>(m.rows()),
                   static_cast<Eigen::Index>(m.cols()));
}

View view(Matrix& m) {
  return View(m.data(), static_cast<Eigen::Index>(m.rows()),
              static_cast<Eigen::Index>(m.cols()));
}

[[noreturn]] void throw_product_mismatch(const char* what, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(what) + ": cannot multiply " + a.shape_string() + " by " +
                   b.shape_string());
}

void check_out(const Matrix& out, std::size_t r, std::size_t c, const char* what) {
  if (out.rows() != r || out.cols() != c) {
    throw ShapeError(std::string(what) + ": accumulator is " + out.shape_string() +
                     ", product is " + std::to_string(r) + "x" + std::to_string(c));
  }
}

template <class F>
Matrix map(const Matrix& m, F f) {
  Matrix out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_product_mismatch("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  view(out).noalias() = view(a) * view(b);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw_product_mismatch("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  view(out).noalias() = view(a).transpose() * view(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw_product_mismatch("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b, double alpha) {
  if (a.cols() != b.rows()) throw_product_mismatch("matmul_acc", a, b);
  check_out(out, a.rows(), b.cols(), "matmul_acc");
  view(out).noalias() += alpha * (view(a) * view(b));
}

void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b, double alpha) {
  if (a.rows() != b.rows()) throw_product_mismatch("matmul_tn_acc", a, b);
  check_out(out, a.cols(), b.cols(), "matmul_tn_acc");
  view(out).noalias() += alpha * (view(a).transpose() * view(b));
}

void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b, double alpha) {
  if (a.cols() != b.cols()) throw_product_mismatch("matmul_nt_acc", a, b);
  check_out(out, a.rows(), b.rows(), "matmul_nt_acc");
  view(out).noalias() += alpha * (view(a) * view(b).transpose());
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix relu(const Matrix& m) {
  return map(m, [](double x) { return x > 0.0 ? x : 0.0; });
}

Matrix softplus(const Matrix& m) {
  return map(m, [](double x) { return softplus(x); });
}

Matrix sigmoid(const Matrix& m) {
  return map(m, [](double x) { return sigmoid(x); });
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - mx);
      total += dst[c];
    }
    const double inv = 1.0 / total;
    for (double& v : dst) v *= inv;
  }
  return out;
}

Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v;
    out(r, 0) = s;
  }
  return out;
}

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double v : m.values()) best = std::max(best, std::abs(v));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    best = std::max(best, std::abs(a.data()[i] - b.data()[i]));
  return best;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

double sum(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

Matrix solve(const Matrix& a, const Matrix& b, double rel_pivot_tol) {
  if (a.rows() != a.cols()) throw ShapeError("solve: matrix is " + a.shape_string());
  if (b.rows() != a.rows()) throw_product_mismatch("solve", a, b);
  const std::size_t n = a.rows();
  Matrix lu = a;
  Matrix x = b;
  double leading = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < n; ++r)
      if (std::abs(lu(r, k)) > std::abs(lu(piv, k))) piv = r;
    const double p = std::abs(lu(piv, k));
    if (k == 0) leading = p;
    if (p == 0.0 || p < rel_pivot_tol * leading) {
      throw SingularMatrixError("solve: pivot " + std::to_string(p) + " at column " +
                                std::to_string(k) + " is below tolerance (leading pivot " +
                                std::to_string(leading) + ")");
    }
    if (piv != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(piv).begin());
      std::swap_ranges(x.row(k).begin(), x.row(k).end(), x.row(piv).begin());
    }
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = lu(r, k) / lu(k, k);
      if (f == 0.0) continue;
      for (std::size_t c = k; c < n; ++c) lu(r, c) -= f * lu(k, c);
      for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) -= f * x(k, c);
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double s = x(k, c);
      for (std::size_t j = k + 1; j < n; ++j) s -= lu(k, j) * x(j, c);
      x(k, c) = s / lu(k, k);
    }
  }
  return x;
}

std::size_t rank(const Matrix& m, double rel_tol) {
  Matrix w = m;
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  const double scale = max_abs(w);
  if (scale == 0.0) return 0;
  std::size_t r = 0;
  for (; r < std::min(rows, cols); ++r) {
    std::size_t pr = r, pc = r;
    double best = 0.0;
    for (std::size_t i = r; i < rows; ++i)
      for (std::size_t j = r; j < cols; ++j)
        if (std::abs(w(i, j)) > best) {
          best = std::abs(w(i, j));
          pr = i;
          pc = j;
        }
    if (best <= rel_tol * scale) break;
    std::swap_ranges(w.row(r).begin(), w.row(r).end(), w.row(pr).begin());
    for (std::size_t i = 0; i < rows; ++i) std::swap(w(i, r), w(i, pc));
    for (std::size_t i = r + 1; i < rows; ++i) {
      const double f = w(i, r) / w(r, r);
      for (std::size_t j = r; j < cols; ++j) w(i, j) -= f * w(r, j);
    }
  }
  return r;
}

Matrix lstsq_pinv_apply(const Matrix& phi_obs, const Matrix& phi_fcast) {
  if (phi_obs.cols() != phi_fcast.cols()) {
    throw ShapeError("lstsq_pinv_apply: basis widths differ, " + phi_obs.shape_string() +
                     " vs " + phi_fcast.shape_string());
  }
  if (phi_obs.rows() < phi_obs.cols()) {
    throw SingularMatrixError("lstsq_pinv_apply: " + phi_obs.shape_string() +
                              " basis cannot have full column rank");
  }
  const Matrix gram = matmul_tn(phi_obs, phi_obs);
  const Matrix pinv = solve(gram, transpose(phi_obs));
  return matmul(phi_fcast, pinv);
}

Matrix dft_magnitude(const Matrix& row) {
  if (row.rows() != 1) throw ShapeError("dft_magnitude: expected 1xN, got " + row.shape_string());
  const std::size_t n = row.cols();
  const std::size_t bins = n / 2 + 1;
  Matrix out(1, bins);
  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n first so the twiddle angle stays in [0, 2pi).
      const double angle =
          2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      re += row(0, t) * std::cos(angle);
      im -= row(0, t) * std::sin(angle);
    }
    out(0, k) = std::hypot(re, im);
  }
  return out;
}

}  // namespace toa
