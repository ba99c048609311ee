#pragma once

// Fused score/activation/value kernel. The N x N kernel is produced in row
// blocks and never stored; the backward pass recomputes each block.

#include <vector>

#include "toa/matrix.hpp"

namespace toa::attention::detail {

enum class Activation { Softmax, Relu, Gated };

// Left (or only) branch scores are scale * q * kt. The gated right branch
// uses right_scale * q_right * kt_right.
struct KernelInputs {
  Activation activation = Activation::Softmax;
  const Matrix* q = nullptr;   // N x d_h
  const Matrix* kt = nullptr;  // d_h x N
  double scale = 1.0;
  const Matrix* q_right = nullptr;
  const Matrix* kt_right = nullptr;
  double right_scale = 1.0;
};

// P(Z) * u, N x u.cols().
Matrix kernel_apply(const KernelInputs& in, const Matrix& u);

// The full N x N kernel P(Z).
Matrix kernel_matrix(const KernelInputs& in);

struct KernelGradients {
  Matrix d_q, d_kt, d_u;
  Matrix d_q_right, d_kt_right;
};

// Gradients of <d_out, P(Z) u> with respect to q, kt, u (and the right
// branch for the gated activation). Score scales are already folded in.
KernelGradients kernel_backward(const KernelInputs& in, const Matrix& u, const Matrix& d_out);

// op(s) * x for every x in xs (op is the transpose when transpose_s is set),
// formed as one product against the column-concatenated batch.
std::vector<Matrix> operator_apply_batch(const Matrix& s, bool transpose_s,
                                         const std::vector<const Matrix*>& xs, int threads);

// Sum over b of a_b * b_b^T, formed as one product over the concatenated batch.
Matrix outer_sum_batch(const std::vector<const Matrix*>& as, const std::vector<const Matrix*>& bs,
                       int threads);

}  // namespace toa::attention::detail
