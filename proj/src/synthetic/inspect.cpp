#include "toa/inspect.hpp"

#include <algorithm>

#include "toa/attention.hpp"
#include "toa/linalg.hpp"

namespace toa::synthetic {

std::vector<HeadOperator> extract_operators(const ModelParams& params, const Matrix& x) {
  BatchCache cache;
  forward_batch(params, {&x}, {}, &cache);
  std::vector<HeadOperator> out;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const auto& attn = params.blocks[l].attn;
    const Matrix& tokens = cache.blocks[l].attn.front().input;
    for (std::size_t h = 0; h < attn.heads.size(); ++h)
      out.push_back({l, h,
                     attention::effective_mixing(tokens, attn.heads[h], attn.variant, attn.options)});
  }
  return out;
}

Matrix spectral_response(const Matrix& row) { return dft_magnitude(row); }

double low_band_energy_fraction(const Matrix& op, std::size_t cutoff) {
  if (op.rows() == 0) throw ShapeError("low_band_energy_fraction: empty operator");
  double acc = 0.0;
  for (std::size_t r = 0; r < op.rows(); ++r) {
    const Matrix spec = dft_magnitude(Matrix::row_vector(op.row(r)));
    double low = 0.0, total = 0.0;
    for (std::size_t k = 0; k < spec.cols(); ++k) {
      const double e = spec(0, k) * spec(0, k);
      total += e;
      if (k < cutoff) low += e;
    }
    acc += total > 0.0 ? low / total : 0.0;
  }
  return acc / static_cast<double>(op.rows());
}

double min_entry(const Matrix& m) {
  if (m.empty()) throw ShapeError("min_entry: empty matrix");
  return *std::min_element(m.values().begin(), m.values().end());
}

}  // namespace toa::synthetic
