#pragma once

#include <cstddef>

#include "toa/matrix.hpp"

namespace toa {

// Products. The _tn / _nt forms use the transpose of the first / second
// operand without materializing it.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// out += alpha * op(a) * op(b)
void matmul_acc(Matrix& out, const Matrix& a, const Matrix& b, double alpha = 1.0);
void matmul_tn_acc(Matrix& out, const Matrix& a, const Matrix& b, double alpha = 1.0);
void matmul_nt_acc(Matrix& out, const Matrix& a, const Matrix& b, double alpha = 1.0);

Matrix transpose(const Matrix& m);

// Elementwise maps.
Matrix relu(const Matrix& m);
Matrix softplus(const Matrix& m);
Matrix sigmoid(const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);

double softplus(double x);
double sigmoid(double x);

// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

Matrix row_sums(const Matrix& m);
double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);
double sum(const Matrix& m);
bool all_finite(const Matrix& m);

// Solves a x = b (b may hold several right-hand sides) by Gaussian
// elimination with partial pivoting. Throws SingularMatrixError when a pivot
// falls below rel_pivot_tol times the leading pivot.
Matrix solve(const Matrix& a, const Matrix& b, double rel_pivot_tol = 1e-10);

// Numerical rank by Gaussian elimination with full pivoting.
std::size_t rank(const Matrix& m, double rel_tol = 1e-9);

// T = phi_fcast (phi_obs^T phi_obs)^{-1} phi_obs^T, solved on the normal
// equations. Throws SingularMatrixError for rank-deficient phi_obs.
Matrix lstsq_pinv_apply(const Matrix& phi_obs, const Matrix& phi_fcast);

// Magnitudes of the one-sided naive DFT of a 1xN row: bins 0..floor(N/2),
// so the Nyquist bin is present for even N.
Matrix dft_magnitude(const Matrix& row);

}  // namespace toa
