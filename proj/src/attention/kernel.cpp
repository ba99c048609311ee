#include "kernel.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "toa/parallel.hpp"

namespace toa::attention::detail {
namespace {

using Index = Eigen::Index;
using Block = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMajor>;
using View = Eigen::Map<RowMajor>;

// Rows per block: a few block-sized N-wide buffers stay resident in L2.
constexpr Index kBlockRows = 32;

ConstView view(const Matrix& m) {
  return ConstView(m.data(), static_cast<Index>(m.rows()), static_cast<Index>(m.cols()));
}
View view(Matrix& m) {
  return View(m.data(), static_cast<Index>(m.rows()), static_cast<Index>(m.cols()));
}

void check(const KernelInputs& in) {
  if (!in.q || !in.kt) throw ConfigError("attention kernel: missing query/key tensors");
  if (in.q->cols() != in.kt->rows() || in.kt->cols() != in.q->rows())
    throw ShapeError("attention kernel: q " + in.q->shape_string() + " vs kt " +
                     in.kt->shape_string());
  if (in.activation == Activation::Gated) {
    if (!in.q_right || !in.kt_right)
      throw ConfigError("attention kernel: gated activation without a right branch");
    if (!in.q_right->same_shape(*in.q) || !in.kt_right->same_shape(*in.kt))
      throw ShapeError("attention kernel: right branch shapes differ from left branch");
  }
}

// Scores and activations for rows [r0, r0 + rows).
struct Workspace {
  Block z, z_right, p;
  Block relu_part, gate, sig, e;  // gated only

  void compute(const KernelInputs& in, Index r0, Index rows, bool need_backward) {
    const Index n = static_cast<Index>(in.kt->cols());
    z.resize(rows, n);
    z.matrix().noalias() = (in.scale * view(*in.q).middleRows(r0, rows)) * view(*in.kt);
    switch (in.activation) {
      case Activation::Softmax:
        p.resize(rows, n);
        for (Index r = 0; r < rows; ++r) {
          auto out = p.row(r);
          out = (z.row(r) - z.row(r).maxCoeff()).exp();
          out /= out.sum();
        }
        break;
      case Activation::Relu:
        p = z.max(0.0);
        break;
      case Activation::Gated: {
        z_right.resize(rows, n);
        z_right.matrix().noalias() =
            (in.right_scale * view(*in.q_right).middleRows(r0, rows)) * view(*in.kt_right);
        // softplus(x) = max(x, 0) + log(1 + exp(-|x|)), returning x itself past 30.
        // log(1 + e) for e in (0, 1] is accurate to an ulp of 1 here.
        e = (-z_right.abs()).exp();
        gate = (z_right > 30.0).select(z_right, z_right.max(0.0) + (1.0 + e).log());
        relu_part = z.max(0.0);
        p = gate * relu_part;
        if (need_backward) sig = (z_right >= 0.0).select(1.0, e) / (1.0 + e);
        break;
      }
    }
  }
};

}  // namespace

Matrix kernel_apply(const KernelInputs& in, const Matrix& u) {
  check(in);
  const Index n = static_cast<Index>(in.q->rows());
  if (u.rows() != in.q->rows())
    throw ShapeError("attention kernel: values " + u.shape_string() + " for " +
                     std::to_string(n) + " tokens");
  Matrix out(in.q->rows(), u.cols());
  View o = view(out);
  const ConstView uv = view(u);
  Workspace ws;
  for (Index r0 = 0; r0 < n; r0 += kBlockRows) {
    const Index rows = std::min(kBlockRows, n - r0);
    ws.compute(in, r0, rows, false);
    o.middleRows(r0, rows).noalias() = ws.p.matrix() * uv;
  }
  return out;
}

Matrix kernel_matrix(const KernelInputs& in) {
  check(in);
  const Index n = static_cast<Index>(in.q->rows());
  Matrix out(in.q->rows(), in.q->rows());
  View o = view(out);
  Workspace ws;
  for (Index r0 = 0; r0 < n; r0 += kBlockRows) {
    const Index rows = std::min(kBlockRows, n - r0);
    ws.compute(in, r0, rows, false);
    o.middleRows(r0, rows) = ws.p.matrix();
  }
  return out;
}

KernelGradients kernel_backward(const KernelInputs& in, const Matrix& u, const Matrix& d_out) {
  check(in);
  const Index n = static_cast<Index>(in.q->rows());
  if (u.rows() != in.q->rows() || !d_out.same_shape(Matrix(in.q->rows(), u.cols())))
    throw ShapeError("attention kernel: upstream " + d_out.shape_string() + " vs values " +
                     u.shape_string());
  const bool gated = in.activation == Activation::Gated;
  KernelGradients g;
  g.d_q = Matrix(in.q->rows(), in.q->cols());
  g.d_kt = Matrix(in.kt->rows(), in.kt->cols());
  g.d_u = Matrix(u.rows(), u.cols());
  if (gated) {
    g.d_q_right = Matrix(in.q->rows(), in.q->cols());
    g.d_kt_right = Matrix(in.kt->rows(), in.kt->cols());
  }
  const ConstView uv = view(u);
  const ConstView dov = view(d_out);
  const ConstView qv = view(*in.q);
  const ConstView ktv = view(*in.kt);
  View dq = view(g.d_q), dkt = view(g.d_kt), du = view(g.d_u);

  Workspace ws;
  Block dp, dz, dz_right;
  for (Index r0 = 0; r0 < n; r0 += kBlockRows) {
    const Index rows = std::min(kBlockRows, n - r0);
    ws.compute(in, r0, rows, true);
    const auto d_rows = dov.middleRows(r0, rows);
    dp.resize(rows, n);
    dp.matrix().noalias() = d_rows * uv.transpose();
    du.noalias() += ws.p.matrix().transpose() * d_rows;
    switch (in.activation) {
      case Activation::Softmax:
        dz.resize(rows, n);
        for (Index r = 0; r < rows; ++r) {
          const double dot = (ws.p.row(r) * dp.row(r)).sum();
          dz.row(r) = in.scale * ws.p.row(r) * (dp.row(r) - dot);
        }
        break;
      case Activation::Relu:
        dz = in.scale * dp * (ws.z > 0.0).cast<double>();
        break;
      case Activation::Gated:
        dz = in.scale * dp * ws.gate * (ws.z > 0.0).cast<double>();
        break;
    }
    dq.middleRows(r0, rows).noalias() = dz.matrix() * ktv.transpose();
    dkt.noalias() += qv.middleRows(r0, rows).transpose() * dz.matrix();
    if (gated) {
      dz_right = in.right_scale * dp * ws.relu_part * ws.sig;
      view(g.d_q_right).middleRows(r0, rows).noalias() =
          dz_right.matrix() * view(*in.kt_right).transpose();
      view(g.d_kt_right).noalias() +=
          view(*in.q_right).middleRows(r0, rows).transpose() * dz_right.matrix();
    }
  }
  return g;
}

namespace {

RowMajor concat_columns(const std::vector<const Matrix*>& xs, std::size_t first, std::size_t last) {
  const Index rows = static_cast<Index>(xs[first]->rows());
  Index cols = 0;
  for (std::size_t i = first; i < last; ++i) cols += static_cast<Index>(xs[i]->cols());
  RowMajor out(rows, cols);
  Index c = 0;
  for (std::size_t i = first; i < last; ++i) {
    out.middleCols(c, static_cast<Index>(xs[i]->cols())) = view(*xs[i]);
    c += static_cast<Index>(xs[i]->cols());
  }
  return out;
}

void check_batch(const std::vector<const Matrix*>& xs, std::size_t rows, const char* what) {
  for (const Matrix* x : xs)
    if (x->rows() != rows)
      throw ShapeError(std::string(what) + ": batch member " + x->shape_string() + " vs " +
                       std::to_string(rows) + " rows");
}

}  // namespace

std::vector<Matrix> operator_apply_batch(const Matrix& s, bool transpose_s,
                                         const std::vector<const Matrix*>& xs, int threads) {
  if (s.rows() != s.cols()) throw ShapeError("operator_apply_batch: operator " + s.shape_string());
  check_batch(xs, s.rows(), "operator_apply_batch");
  std::vector<Matrix> out(xs.size());
  if (xs.empty()) return out;
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, xs.size());
  const ConstView sv = view(s);
  parallel_for(workers, static_cast<int>(workers), [&](std::size_t w) {
    const std::size_t first = xs.size() * w / workers;
    const std::size_t last = xs.size() * (w + 1) / workers;
    const RowMajor x = concat_columns(xs, first, last);
    RowMajor y(x.rows(), x.cols());
    if (transpose_s)
      y.noalias() = sv.transpose() * x;
    else
      y.noalias() = sv * x;
    Index c = 0;
    for (std::size_t i = first; i < last; ++i) {
      const Index k = static_cast<Index>(xs[i]->cols());
      out[i] = Matrix(xs[i]->rows(), xs[i]->cols());
      view(out[i]) = y.middleCols(c, k);
      c += k;
    }
  });
  return out;
}

Matrix outer_sum_batch(const std::vector<const Matrix*>& as, const std::vector<const Matrix*>& bs,
                       int threads) {
  if (as.empty() || as.size() != bs.size())
    throw ShapeError("outer_sum_batch: batch sizes differ or are empty");
  check_batch(as, as.front()->rows(), "outer_sum_batch");
  check_batch(bs, bs.front()->rows(), "outer_sum_batch");
  for (std::size_t i = 0; i < as.size(); ++i)
    if (as[i]->cols() != bs[i]->cols())
      throw ShapeError("outer_sum_batch: " + as[i]->shape_string() + " vs " +
                       bs[i]->shape_string());
  const RowMajor a = concat_columns(as, 0, as.size());
  const RowMajor b = concat_columns(bs, 0, bs.size());
  Matrix out(static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(b.rows()));
  View o = view(out);
  const Index rows = a.rows();
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, static_cast<std::size_t>(rows));
  parallel_for(workers, static_cast<int>(workers), [&](std::size_t w) {
    const Index r0 = rows * static_cast<Index>(w) / static_cast<Index>(workers);
    const Index r1 = rows * static_cast<Index>(w + 1) / static_cast<Index>(workers);
    o.middleRows(r0, r1 - r0).noalias() = a.middleRows(r0, r1 - r0) * b.transpose();
  });
  return out;
}

}  // namespace toa::attention::detail
